#pragma once

// Desk-scale proposal source standing in for a trained RPN: jittered copies of
// the ground truth as positives and random anchors as background.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "gmlf/annotations.hpp"
#include "gmlf/detector/anchors.hpp"
#include "gmlf/nn/params.hpp"

namespace gmlf {

struct ProposalSpec {
  // Center shift uniform in +-jitter * (w, h); size factor exp(uniform(+-jitter)).
  double jitter = 0.15;
  // Positives : negatives = 1 : 3.
  double positive_fraction = 0.25;
  double image_width = 512;
  double image_height = 256;
  AnchorConfig anchors;
  double min_side = 4.0;  // background boxes smaller than this after clipping are redrawn
};

inline RoiBox jitter_box(const RoiBox& b, double amplitude, Rng& rng) {
  if (amplitude <= 0) return b;
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  const double w = b.width(), h = b.height();
  const double cx = b.center_x() + u(rng) * w;
  const double cy = b.center_y() + u(rng) * h;
  const double nw = w * std::exp(u(rng));
  const double nh = h * std::exp(u(rng));
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

/// `count` proposals, deterministic in `seed`. The first round(count *
/// positive_fraction) cycle over the non-ignore ground truth with jitter; the
/// rest are anchors drawn uniformly from the image's anchor grid, clipped.
/// With no usable ground truth every proposal is background.
inline std::vector<RoiBox> sample_proposals(const std::vector<GroundTruthBox>& gt, const ProposalSpec& spec, int count,
                                            std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_proposals: count must be >= 1");
  Rng rng(seed);
  std::vector<const GroundTruthBox*> usable;
  for (const auto& g : gt) {
    if (!g.ignore) usable.push_back(&g);
  }
  const int n_pos = usable.empty() ? 0 : static_cast<int>(std::lround(count * spec.positive_fraction));
  std::vector<RoiBox> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < n_pos; ++i) {
    const RoiBox b = jitter_box(usable[static_cast<std::size_t>(i) % usable.size()]->box, spec.jitter, rng);
    out.push_back(clip_box(b, spec.image_width, spec.image_height));
    if (!out.back().valid()) out.back() = usable[static_cast<std::size_t>(i) % usable.size()]->box;
  }
  const int grid_w = std::max(1, static_cast<int>(spec.image_width) / spec.anchors.stride);
  const int grid_h = std::max(1, static_cast<int>(spec.image_height) / spec.anchors.stride);
  std::uniform_int_distribution<int> cell_x(0, grid_w - 1), cell_y(0, grid_h - 1);
  std::uniform_int_distribution<int> scale(0, static_cast<int>(spec.anchors.scales.size()) - 1);
  while (static_cast<int>(out.size()) < count) {
    const double cx = (cell_x(rng) + 0.5) * spec.anchors.stride;
    const double cy = (cell_y(rng) + 0.5) * spec.anchors.stride;
    const double h = spec.anchors.scales[static_cast<std::size_t>(scale(rng))];
    const double w = spec.anchors.ratio * h;
    const RoiBox b = clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, spec.image_width,
                              spec.image_height);
    if (b.width() >= spec.min_side && b.height() >= spec.min_side) out.push_back(b);
  }
  return out;
}

struct ProposalLabels {
  std::vector<int> labels;                       // 1 = pedestrian, 0 = background
  std::vector<std::array<double, 4>> targets;    // encoded deltas, zero for background
  std::vector<int> matched_gt;                   // -1 for background
};

/// IoU >= threshold with some non-ignore box is positive, everything else is
/// background (no ignore band).
inline ProposalLabels label_proposals(const std::vector<RoiBox>& proposals, const std::vector<GroundTruthBox>& gt,
                                      double positive_iou = 0.5) {
  ProposalLabels out;
  for (const auto& p : proposals) {
    int best = -1;
    double best_iou = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (gt[g].ignore) continue;
      const double o = iou(p, gt[g].box);
      if (o > best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= positive_iou) {
      out.labels.push_back(1);
      out.targets.push_back(encode_box(p, gt[static_cast<std::size_t>(best)].box));
      out.matched_gt.push_back(best);
    } else {
      out.labels.push_back(0);
      out.targets.push_back({0, 0, 0, 0});
      out.matched_gt.push_back(-1);
    }
  }
  return out;
}

}  // namespace gmlf
