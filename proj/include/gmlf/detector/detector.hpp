#pragma once

// Region-based detector: backbone pyramid -> RoI features -> two hidden fc
// layers -> (2-way class scores, 4 box deltas) per RoI.
//
// Gated models squeeze and gate every used block. The baseline RoI-pools the
// block-5 map directly, with no squeeze or gate parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/annotations.hpp"
#include "gmlf/box.hpp"
#include "gmlf/detector/backbone.hpp"
#include "gmlf/gated/gated_extractor.hpp"
#include "gmlf/nn/layers.hpp"
#include "gmlf/nn/params.hpp"

namespace gmlf {

struct ModelConfig {
  BackboneConfig backbone;
  GateKind gate_kind = GateKind::channel;
  int squeeze_ratio = 2;
  std::vector<int> blocks_used{1, 2, 3, 4, 5};
  int roi_size = 7;
  int head_hidden = 128;
  double cls_init_std = 0.01;
  double reg_init_std = 0.001;
  double squeeze_std = 0.0;  // see GatedExtractorConfig::squeeze_std

  /// Blocks actually pooled: block 5 only for the baseline.
  std::vector<int> effective_blocks() const {
    return gate_kind == GateKind::none ? std::vector<int>{kNumBlocks} : blocks_used;
  }

  GatedExtractorConfig extractor_config() const {
    GatedExtractorConfig e;
    e.blocks_used = blocks_used;
    e.squeeze_ratio = squeeze_ratio;
    e.roi_size = roi_size;
    e.gate_kind = gate_kind;
    e.squeeze_std = squeeze_std;
    e.block_strides = backbone.stride_list();
    e.block_channels = backbone.channel_list();
    return e;
  }

  void validate() const {
    backbone.validate();
    if (head_hidden < 1) throw std::invalid_argument("model: head_hidden must be >= 1");
    if (roi_size < 1) throw std::invalid_argument("model: roi_size must be >= 1");
    if (gate_kind != GateKind::none) extractor_config().validate();
  }

  /// Channels of the concatenated RoI feature fed to the head.
  int roi_channels() const {
    if (gate_kind == GateKind::none) return backbone.channels[kNumBlocks - 1];
    return extractor_config().output_channels();
  }

  int head_input() const { return roi_channels() * roi_size * roi_size; }

  /// Stable text form; the checkpoint config hash is taken over it.
  std::string canonical() const {
    std::ostringstream s;
    s << "in=" << backbone.in_channels << ";ch=";
    for (int c : backbone.channels) s << c << ',';
    s << ";convs=";
    for (int c : backbone.convs) s << c << ',';
    s << ";down=";
    for (int c : backbone.downsample) s << c << ',';
    s << ";dil=" << backbone.final_dilation << ";gate=" << to_string(gate_kind);
    if (gate_kind != GateKind::none) {
      s << ";r=" << squeeze_ratio << ";blocks=";
      for (int b : blocks_used) s << b << ',';
    }
    s << ";p=" << roi_size << ";hidden=" << head_hidden;
    return s.str();
  }
};

template <typename T>
struct DetectionHead {
  FcParams<T> fc1, fc2, cls, reg;
};

template <typename T>
struct HeadOutput {
  Tensor<T> cls_scores;  // (N, 2)
  Tensor<T> box_deltas;  // (N, 4)
};

template <typename T>
class Detector {
 public:
  Detector() = default;

  /// Parameters are drawn in a fixed order (backbone, extractor, head) from
  /// one generator seeded by `seed`.
  Detector(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    backbone_ = Backbone<T>(cfg_.backbone, rng);
    if (cfg_.gate_kind != GateKind::none) extractor_.emplace(cfg_.extractor_config(), rng);
    const int in = cfg_.head_input();
    const int hid = cfg_.head_hidden;
    head_.fc1 = make_fc<T>(in, hid, std::sqrt(2.0 / in), rng);
    head_.fc2 = make_fc<T>(hid, hid, std::sqrt(2.0 / hid), rng);
    head_.cls = make_fc<T>(hid, 2, cfg_.cls_init_std, rng);
    head_.reg = make_fc<T>(hid, 4, cfg_.reg_init_std, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const std::optional<GatedExtractor<T>>& extractor() const { return extractor_; }
  const DetectionHead<T>& head() const { return head_; }

  ParamList<T> head_parameters() const {
    ParamList<T> list;
    register_params(list, "head.fc1", head_.fc1);
    register_params(list, "head.fc2", head_.fc2);
    register_params(list, "head.cls", head_.cls);
    register_params(list, "head.reg", head_.reg);
    return list;
  }

  ParamList<T> parameters() const {
    ParamList<T> list = backbone_.parameters();
    if (extractor_) {
      auto e = extractor_->parameters();
      list.insert(list.end(), e.begin(), e.end());
    }
    auto h = head_parameters();
    list.insert(list.end(), h.begin(), h.end());
    return list;
  }

  /// Per-image features the RoIs are pooled from: the squeezed maps of the
  /// used blocks, or block 5 alone for the baseline.
  std::vector<Tensor<T>> roi_sources(const Tensor<T>& image) const {
    auto pyramid = backbone_.forward(image);
    if (extractor_) return extractor_->squeeze_pyramid(pyramid);
    return {pyramid[kNumBlocks - 1]};
  }

  /// (C, p, p) feature of one RoI, plus the gates when the model has them.
  RoiExtraction<T> roi_feature(const std::vector<Tensor<T>>& sources, const RoiBox& roi) const {
    if (extractor_) return extractor_->extract_from_squeezed(sources, roi);
    const int stride = cfg_.backbone.max_stride();
    Tensor<T> pooled = roi_max_pool(sources.at(0), roi, cfg_.roi_size, 1.0 / stride);
    RoiExtraction<T> r{pooled, {{pooled, std::nullopt}}, {}};
    return r;
  }

  HeadOutput<T> head_forward(const std::vector<Tensor<T>>& roi_features) const {
    const int n = static_cast<int>(roi_features.size());
    Tensor<T> x = reshape(stack(roi_features), Shape{n, cfg_.head_input()});
    x = relu(fully_connected_rows(x, head_.fc1));
    x = relu(fully_connected_rows(x, head_.fc2));
    return {fully_connected_rows(x, head_.cls), fully_connected_rows(x, head_.reg)};
  }

  HeadOutput<T> forward(const Tensor<T>& image, const std::vector<RoiBox>& rois) const {
    if (rois.empty()) throw std::invalid_argument("detector forward: no RoIs");
    const auto sources = roi_sources(image);
    std::vector<Tensor<T>> feats;
    feats.reserve(rois.size());
    for (const auto& r : rois) feats.push_back(roi_feature(sources, r).fused);
    return head_forward(feats);
  }

  /// Scores (softmax pedestrian probability), decodes and clips every
  /// proposal, then applies NMS.
  std::vector<Detection> detect(const Tensor<T>& image, const std::vector<RoiBox>& proposals,
                                double nms_threshold = 0.5) const {
    NoGradGuard guard;
    const auto out = forward(image, proposals);
    const double w = image.dim(2), h = image.dim(1);
    std::vector<RoiBox> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      const double z0 = out.cls_scores[2 * i], z1 = out.cls_scores[2 * i + 1];
      const double p = 1.0 / (1.0 + std::exp(z0 - z1));
      std::array<double, 4> d{};
      for (int k = 0; k < 4; ++k) d[static_cast<std::size_t>(k)] = out.box_deltas[4 * i + static_cast<std::size_t>(k)];
      const RoiBox b = clip_box(decode_box(proposals[i], d), w, h);
      if (!b.valid()) continue;
      boxes.push_back(b);
      scores.push_back(p);
    }
    std::vector<Detection> dets;
    for (std::size_t k : nms(boxes, scores, nms_threshold)) dets.push_back({boxes[k], scores[k]});
    return dets;
  }

 private:
  ModelConfig cfg_;
  Backbone<T> backbone_;
  std::optional<GatedExtractor<T>> extractor_;
  DetectionHead<T> head_;
};

}  // namespace gmlf
