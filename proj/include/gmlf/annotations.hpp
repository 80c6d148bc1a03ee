#pragma once

#include <stdexcept>

#include "gmlf/box.hpp"

namespace gmlf {

/// Annotated pedestrian: full-extent box, its height in pixels, the visible
/// fraction, and whether the protocol should ignore it.
struct GroundTruthBox {
  RoiBox box;
  double height = 0;
  double visibility = 1;
  bool ignore = false;

  void validate() const {
    if (!box.valid()) throw std::invalid_argument("ground truth box must have x2 > x1 and y2 > y1");
    if (!(height > 0)) throw std::invalid_argument("ground truth height must be positive");
    if (visibility < 0 || visibility > 1) throw std::invalid_argument("ground truth visibility must lie in [0, 1]");
  }
};

/// Scored output box.
struct Detection {
  RoiBox box;
  double score = 0;
};

}  // namespace gmlf
