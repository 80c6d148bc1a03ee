#pragma once

// Miss rate versus false positives per image, and the log-average miss rate
// over FPPI in [1e-2, 1e0].
//
// Matching protocol: per image, detections are visited in descending score
// (ties keep input order). A detection claims the unmatched non-ignore ground
// truth with the highest IoU >= threshold (TP). Otherwise, if it covers an
// ignore region by intersection / detection-area >= threshold it is ignored.
// Otherwise it is a false positive.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/annotations.hpp"
#include "gmlf/box.hpp"

namespace gmlf {

enum class MatchOutcome { true_positive, false_positive, ignored };

struct ImageMatch {
  std::vector<double> scores;            // one per detection, input order
  std::vector<MatchOutcome> outcomes;    // one per detection, input order
  std::vector<int> matched_gt;           // gt index per detection, -1 if none
  std::vector<bool> gt_matched;          // one per ground truth
  std::size_t non_ignore_gt = 0;

  std::size_t missed() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < gt_matched.size(); ++i) m += !gt_matched[i];
    return m;
  }
};

constexpr double kDefaultMatchIou = 0.5;

inline ImageMatch match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                                   double iou_thresh = kDefaultMatchIou) {
  ImageMatch m;
  m.scores.resize(dets.size());
  m.outcomes.assign(dets.size(), MatchOutcome::false_positive);
  m.matched_gt.assign(dets.size(), -1);
  m.gt_matched.assign(gts.size(), false);
  for (const auto& g : gts) m.non_ignore_gt += !g.ignore;

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  for (std::size_t d : order) {
    m.scores[d] = dets[d].score;
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].ignore || m.gt_matched[g]) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      m.outcomes[d] = MatchOutcome::true_positive;
      m.matched_gt[d] = best;
      m.gt_matched[static_cast<std::size_t>(best)] = true;
      continue;
    }
    const double det_area = dets[d].box.area();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!gts[g].ignore || det_area <= 0) continue;
      if (intersection_area(dets[d].box, gts[g].box) / det_area >= iou_thresh) {
        m.outcomes[d] = MatchOutcome::ignored;
        m.matched_gt[d] = static_cast<int>(g);
        break;
      }
    }
  }
  // Ignore ground truths are never counted as missed.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].ignore) m.gt_matched[g] = true;
  }
  return m;
}

struct CurvePoint {
  double fppi = 0;
  double miss_rate = 1;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// One point per distinct detection score, from the highest score down.
/// Without detections the curve is the single point (0, 1).
inline std::vector<CurvePoint> fppi_missrate_curve(const std::vector<ImageMatch>& images, std::size_t image_count) {
  if (image_count < 1) throw std::invalid_argument("fppi_missrate_curve: image_count must be >= 1");
  std::size_t total_gt = 0;
  struct Scored {
    double score;
    MatchOutcome outcome;
  };
  std::vector<Scored> all;
  for (const auto& im : images) {
    total_gt += im.non_ignore_gt;
    for (std::size_t i = 0; i < im.scores.size(); ++i) all.push_back({im.scores[i], im.outcomes[i]});
  }
  if (total_gt == 0) {
    throw std::invalid_argument("fppi_missrate_curve: no non-ignore ground truth, miss rate is undefined");
  }
  if (all.empty()) return {{0.0, 1.0}};
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  std::vector<CurvePoint> curve;
  std::size_t tp = 0, fp = 0;
  const double n_img = static_cast<double>(image_count);
  const double n_gt = static_cast<double>(total_gt);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].outcome == MatchOutcome::true_positive) ++tp;
    if (all[i].outcome == MatchOutcome::false_positive) ++fp;
    const bool group_end = i + 1 == all.size() || all[i + 1].score != all[i].score;
    if (group_end) curve.push_back({static_cast<double>(fp) / n_img, static_cast<double>(total_gt - tp) / n_gt});
  }
  return curve;
}

struct LogAverageOptions {
  int points = 9;
  double fppi_lo = 1e-2;
  double fppi_hi = 1e0;
  double miss_floor = 1e-4;
};

/// FPPI reference points, log-uniform over [lo, hi].
inline std::vector<double> reference_fppi(const LogAverageOptions& opts = {}) {
  std::vector<double> refs;
  const double a = std::log10(opts.fppi_lo), b = std::log10(opts.fppi_hi);
  for (int i = 0; i < opts.points; ++i) {
    refs.push_back(opts.points == 1 ? opts.fppi_lo : std::pow(10.0, a + (b - a) * i / (opts.points - 1)));
  }
  return refs;
}

/// Miss rate sampled at each reference FPPI: the last curve point (in sweep
/// order) with fppi <= reference; the curve's highest miss rate when no point
/// qualifies.
inline std::vector<double> sampled_miss_rates(const std::vector<CurvePoint>& curve, const LogAverageOptions& opts = {}) {
  if (curve.empty()) throw std::invalid_argument("log_average_miss_rate: empty curve");
  double highest = 0;
  for (const auto& p : curve) highest = std::max(highest, p.miss_rate);
  std::vector<double> out;
  for (double ref : reference_fppi(opts)) {
    double mr = highest;
    for (const auto& p : curve) {
      if (p.fppi <= ref) mr = p.miss_rate;
    }
    out.push_back(mr);
  }
  return out;
}

/// exp(mean(ln(max(mr_i, floor)))) over the reference points.
inline double log_average_miss_rate(const std::vector<CurvePoint>& curve, const LogAverageOptions& opts = {}) {
  const auto mrs = sampled_miss_rates(curve, opts);
  double acc = 0;
  for (double mr : mrs) acc += std::log(std::max(mr, opts.miss_floor));
  return std::exp(acc / static_cast<double>(mrs.size()));
}

// ---------------------------------------------------------------------------
// Height / visibility subsets. Bounds are inclusive; an unbounded upper end
// is +infinity.

struct Range {
  double lo = 0;
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct SubsetSpec {
  std::string name;
  Range height;
  Range visibility;
};

inline SubsetSpec subset_all() { return {"All", {20, std::numeric_limits<double>::infinity()}, {0.2, std::numeric_limits<double>::infinity()}}; }
inline SubsetSpec subset_small() { return {"Small", {50, 75}, {0.65, std::numeric_limits<double>::infinity()}}; }
inline SubsetSpec subset_occlusion() { return {"Occlusion", {50, std::numeric_limits<double>::infinity()}, {0.2, 0.65}}; }
inline SubsetSpec subset_reasonable() { return {"Reasonable", {50, std::numeric_limits<double>::infinity()}, {0.65, std::numeric_limits<double>::infinity()}}; }

inline std::vector<SubsetSpec> default_subsets() {
  return {subset_all(), subset_small(), subset_occlusion(), subset_reasonable()};
}

inline SubsetSpec subset_by_name(const std::string& name) {
  for (auto s : default_subsets()) {
    std::string lower = s.name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name == s.name || name == lower) return s;
  }
  throw std::invalid_argument("unknown subset '" + name + "' (expected all|small|occlusion|reasonable)");
}

/// Marks out-of-range boxes as ignore; never removes records.
inline std::vector<GroundTruthBox> subset_filter(std::vector<GroundTruthBox> gts, const SubsetSpec& spec) {
  if (spec.height.lo > spec.height.hi || spec.visibility.lo > spec.visibility.hi) {
    throw std::invalid_argument("subset '" + spec.name + "' has lo > hi");
  }
  for (auto& g : gts) {
    if (!spec.height.contains(g.height) || !spec.visibility.contains(g.visibility)) g.ignore = true;
  }
  return gts;
}

struct SubsetResult {
  std::string subset;
  double mr2 = 1;  // NaN when the subset holds no ground truth
  std::vector<CurvePoint> curve;
  std::size_t ground_truth = 0;
};

/// Filters each image's ground truth by `spec`, matches, and log-averages.
/// A subset with no non-ignore ground truth has no miss rate: mr2 is NaN and
/// the curve is empty.
inline SubsetResult evaluate_subset(const std::vector<std::vector<Detection>>& dets,
                                    const std::vector<std::vector<GroundTruthBox>>& gts, const SubsetSpec& spec,
                                    double iou_thresh = kDefaultMatchIou, const LogAverageOptions& opts = {}) {
  if (dets.size() != gts.size()) {
    throw std::invalid_argument("evaluate_subset: " + std::to_string(dets.size()) + " detection lists for " +
                                std::to_string(gts.size()) + " images");
  }
  std::vector<ImageMatch> matches;
  matches.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    matches.push_back(match_detections(dets[i], subset_filter(gts[i], spec), iou_thresh));
  }
  SubsetResult r;
  r.subset = spec.name;
  for (const auto& m : matches) r.ground_truth += m.non_ignore_gt;
  if (r.ground_truth == 0) {
    r.mr2 = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.curve = fppi_missrate_curve(matches, std::max<std::size_t>(dets.size(), 1));
  r.mr2 = log_average_miss_rate(r.curve, opts);
  return r;
}

}  // namespace gmlf
