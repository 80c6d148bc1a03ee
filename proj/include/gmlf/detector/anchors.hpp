#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gmlf/box.hpp"

namespace gmlf {

/// Single-aspect anchors: height s, width ratio * s, one per scale per cell.
struct AnchorConfig {
  double ratio = 0.41;
  std::vector<double> scales = geometric_scales(16.0, 256.0, 9);
  int stride = 8;

  static std::vector<double> geometric_scales(double lo, double hi, int n) {
    if (n < 1 || !(lo > 0) || !(hi >= lo)) throw std::invalid_argument("anchor scales: need n >= 1 and 0 < lo <= hi");
    std::vector<double> s;
    for (int i = 0; i < n; ++i) s.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    return s;
  }

  void validate() const {
    if (!(ratio > 0)) throw std::invalid_argument("anchor ratio must be positive");
    if (stride < 1) throw std::invalid_argument("anchor stride must be >= 1");
    if (scales.empty()) throw std::invalid_argument("anchor scales must be non-empty");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (!(scales[i] > 0)) throw std::invalid_argument("anchor scales must be positive");
      if (i > 0 && !(scales[i] > scales[i - 1])) throw std::invalid_argument("anchor scales must strictly increase");
    }
  }
};

/// Anchors for a feature grid of Hf x Wf cells, cell-major (row, col) then
/// scale. Boxes are centered on the cell's image-space center and are not
/// clipped.
inline std::vector<RoiBox> generate_anchors(const AnchorConfig& cfg, int feature_h, int feature_w) {
  cfg.validate();
  std::vector<RoiBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feature_h) * feature_w * cfg.scales.size());
  for (int i = 0; i < feature_h; ++i) {
    for (int j = 0; j < feature_w; ++j) {
      const double cx = (j + 0.5) * cfg.stride;
      const double cy = (i + 0.5) * cfg.stride;
      for (double s : cfg.scales) {
        const double h = s, w = cfg.ratio * s;
        anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  }
  return anchors;
}

}  // namespace gmlf
