#pragma once

// Single-image SGD training and held-out evaluation for the detector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/dataset.hpp"
#include "gmlf/detector/detector.hpp"
#include "gmlf/detector/loss.hpp"
#include "gmlf/detector/proposals.hpp"
#include "gmlf/detector/sgd.hpp"
#include "gmlf/eval/miss_rate.hpp"

namespace gmlf {

/// splitmix64 finalizer; derives independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct TrainConfig {
  SgdConfig sgd;
  std::uint64_t seed = 1;
  bool flip = true;
  double positive_iou = 0.5;
  // false: every iteration reuses iteration 1's flip and proposals for its
  // image (a fixed batch, as in the single-image overfit check).
  bool resample = true;
  ProposalSpec proposals;
};

struct TrainStats {
  std::vector<double> loss;
  std::vector<double> cls_loss;
  std::vector<double> reg_loss;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int iteration, double value)
      : std::runtime_error("training diverged: loss is " + std::to_string(value) + " at iteration " +
                           std::to_string(iteration)),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// One image per iteration. Images are visited in a per-epoch shuffled order;
/// flips and proposals are drawn from generators derived from the seed and
/// the iteration, so the run is a pure function of (model, data, config).
/// `on_iteration(it, loss)` is called after every step when set.
template <typename T>
TrainStats train(Detector<T>& model, const Dataset& data, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_iteration = {}) {
  cfg.sgd.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  ParamList<T> params = model.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  SgdState<T> state;
  TrainStats stats;
  const int iterations = cfg.sgd.total_iterations();
  std::vector<std::size_t> order(data.size());
  Rng order_rng(mix_seed(cfg.seed, 0x5eed));
  for (int it = 0; it < iterations; ++it) {
    const std::size_t epoch_pos = static_cast<std::size_t>(it) % data.size();
    if (epoch_pos == 0) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), order_rng);
    }
    const Sample& sample = data[order[epoch_pos]];
    Rng it_rng(mix_seed(cfg.seed, cfg.resample ? static_cast<std::uint64_t>(it) + 1 : order[epoch_pos] + 1));
    const bool flip = cfg.flip && std::bernoulli_distribution(0.5)(it_rng);
    const Image img = flip ? flip_horizontal(sample.image) : sample.image;
    std::vector<GroundTruthBox> gts = sample.boxes;
    if (flip) {
      for (auto& g : gts) g = flip_box(g, img.width);
    }
    ProposalSpec spec = cfg.proposals;
    spec.image_width = img.width;
    spec.image_height = img.height;
    const auto rois = sample_proposals(gts, spec, cfg.sgd.roi_batch, it_rng());
    const auto labels = label_proposals(rois, gts, cfg.positive_iou);

    const auto out = model.forward(image_to_tensor<T>(img), rois);
    auto loss = detection_loss(out.cls_scores, out.box_deltas, labels.labels, labels.targets);
    const double value = static_cast<double>(loss.total.item());
    if (!std::isfinite(value)) throw TrainingDiverged(it + 1, value);
    stats.loss.push_back(value);
    stats.cls_loss.push_back(loss.classification);
    stats.reg_loss.push_back(loss.regression);
    backward(loss.total);
    sgd_step(params, state, cfg.sgd.learning_rate(it), cfg.sgd);
    if (on_iteration) on_iteration(it + 1, value);
  }
  return stats;
}

struct EvalConfig {
  std::vector<SubsetSpec> subsets = default_subsets();
  double iou_threshold = kDefaultMatchIou;
  double nms_threshold = 0.5;
  int proposals_per_image = 128;
  std::uint64_t seed = 7;
  ProposalSpec proposals;
};

/// Detections for every image; proposals are seeded per image index only, so
/// every model sees the same candidate boxes.
template <typename T>
std::vector<std::vector<Detection>> detect_dataset(const Detector<T>& model, const Dataset& data,
                                                   const EvalConfig& cfg) {
  std::vector<std::vector<Detection>> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    ProposalSpec spec = cfg.proposals;
    spec.image_width = s.image.width;
    spec.image_height = s.image.height;
    const auto props = sample_proposals(s.boxes, spec, cfg.proposals_per_image, mix_seed(cfg.seed, i));
    out.push_back(model.detect(image_to_tensor<T>(s.image), props, cfg.nms_threshold));
  }
  return out;
}

inline std::vector<SubsetResult> evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                                                     const Dataset& data, const EvalConfig& cfg) {
  std::vector<std::vector<GroundTruthBox>> gts;
  for (const auto& s : data) gts.push_back(s.boxes);
  std::vector<SubsetResult> results;
  for (const auto& spec : cfg.subsets) results.push_back(evaluate_subset(dets, gts, spec, cfg.iou_threshold));
  return results;
}

}  // namespace gmlf
