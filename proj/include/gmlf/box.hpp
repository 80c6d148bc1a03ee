#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

namespace gmlf {

/// Axis-aligned box in continuous image-pixel coordinates, x2 > x1, y2 > y1.
struct RoiBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

inline double intersection_area(const RoiBox& a, const RoiBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

/// Intersection over union, in [0, 1].
inline double iou(const RoiBox& a, const RoiBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

/// Regression offsets (dx, dy, dw, dh) of `target` relative to `proposal`,
/// divided by the usual (0.1, 0.1, 0.2, 0.2) normalizers.
constexpr std::array<double, 4> kBoxDeltaStd{0.1, 0.1, 0.2, 0.2};

inline std::array<double, 4> encode_box(const RoiBox& proposal, const RoiBox& target) {
  const double pw = proposal.width(), ph = proposal.height();
  return {(target.center_x() - proposal.center_x()) / pw / kBoxDeltaStd[0],
          (target.center_y() - proposal.center_y()) / ph / kBoxDeltaStd[1],
          std::log(target.width() / pw) / kBoxDeltaStd[2], std::log(target.height() / ph) / kBoxDeltaStd[3]};
}

inline RoiBox decode_box(const RoiBox& proposal, const std::array<double, 4>& delta) {
  const double pw = proposal.width(), ph = proposal.height();
  // exp() is clamped so a wild regression cannot produce inf boxes.
  constexpr double kMaxLog = 4.135;  // log(1000/16)
  const double cx = proposal.center_x() + delta[0] * kBoxDeltaStd[0] * pw;
  const double cy = proposal.center_y() + delta[1] * kBoxDeltaStd[1] * ph;
  const double w = pw * std::exp(std::min(delta[2] * kBoxDeltaStd[2], kMaxLog));
  const double h = ph * std::exp(std::min(delta[3] * kBoxDeltaStd[3], kMaxLog));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline RoiBox clip_box(const RoiBox& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

/// Greedy non-maximum suppression. Returns kept indices in descending score
/// order; equal scores keep input order.
inline std::vector<std::size_t> nms(const std::vector<RoiBox>& boxes, const std::vector<double>& scores,
                                    double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<bool> removed(boxes.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (!removed[b] && iou(boxes[a], boxes[b]) > iou_threshold) removed[b] = true;
    }
  }
  return keep;
}

}  // namespace gmlf
