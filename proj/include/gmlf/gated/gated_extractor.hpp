#pragma once

// Gated multi-layer RoI feature extraction.
//
// Each backbone block gets its own squeeze unit (1x1 conv, C_in -> C_in / r)
// and its own gate unit. Per image the full block maps are squeezed once;
// per RoI each squeezed map is RoI-pooled to (C_out, p, p), modulated by its
// gate G in (0,1), and the gated maps are concatenated in block order.
//
//   spatial gate: G = sigmoid(fc2(relu(fc1(relu(conv1x1_{C->1}(R))))))  -> (1, p, p)
//   channel gate: G = sigmoid(fc2(relu(fc1(relu(dwsep_{pxp, C->C}(R)))))) -> (C, 1, 1)
//   R_hat = G (x) R   (broadcast over channels or over locations)

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/autodiff/tensor.hpp"
#include "gmlf/nn/layers.hpp"
#include "gmlf/nn/params.hpp"

namespace gmlf {

enum class GateKind { none, spatial, channel };

inline const char* to_string(GateKind k) {
  switch (k) {
    case GateKind::none: return "none";
    case GateKind::spatial: return "spatial";
    case GateKind::channel: return "channel";
  }
  return "?";
}

inline GateKind parse_gate_kind(const std::string& s) {
  if (s == "none" || s == "baseline") return GateKind::none;
  if (s == "spatial") return GateKind::spatial;
  if (s == "channel") return GateKind::channel;
  throw std::invalid_argument("unknown gate kind '" + s + "' (expected none|spatial|channel)");
}

/// Weight stddev for gate layers; squeeze layers default to sqrt(1 / C_in).
constexpr double kGateInitStd = 0.01;
/// fc2 bias offset so fresh gates start near sigmoid(1) ~ 0.73 instead of 0.5.
constexpr double kGateOpenBias = 1.0;

inline int spatial_gate_hidden(int h, int w) { return std::max(1, h * w / 2); }
inline int channel_gate_hidden(int channels) { return std::max(4, channels / 4); }

template <typename T>
struct SqueezeUnit {
  Conv2dParams<T> filters;  // (C_out, C_in, 1, 1)
  int ratio = 1;

  int in_channels() const { return filters.in_channels(); }
  int out_channels() const { return filters.out_channels(); }
};

inline int squeezed_channels(int in_channels, int ratio) {
  if (ratio < 1 || in_channels % ratio != 0) {
    throw std::invalid_argument("squeeze ratio " + std::to_string(ratio) + " must divide the " +
                                std::to_string(in_channels) + " input channels");
  }
  return in_channels / ratio;
}

template <typename T>
SqueezeUnit<T> make_squeeze_unit(int in_channels, int ratio, Rng& rng, double stddev = kGateInitStd) {
  const int out = squeezed_channels(in_channels, ratio);
  return {make_conv<T>(in_channels, out, 1, 1, 0, 1, stddev, rng), ratio};
}

/// r = 1 squeeze whose kernel is the channel identity.
template <typename T>
SqueezeUnit<T> make_identity_squeeze(int channels) {
  Tensor<T> k({channels, channels, 1, 1}, T(0), true);
  for (int c = 0; c < channels; ++c) k.mutable_values()[static_cast<std::size_t>(c) * channels + c] = T(1);
  return {{k, constant_tensor<T>({channels}, 0.0), 1, 0, 1}, 1};
}

/// Each output channel is a learned 1x1 filter over all input channels.
template <typename T>
Tensor<T> squeeze_apply(const Tensor<T>& features, const SqueezeUnit<T>& unit) {
  if (features.rank() != 3 || features.dim(0) != unit.in_channels()) {
    throw ShapeError("squeeze_apply: feature map " + shape_str(features.shape()) + " does not have the " +
                     std::to_string(unit.in_channels()) + " channels the squeeze unit expects");
  }
  return conv2d(features, unit.filters);
}

template <typename T>
struct GateUnit {
  GateKind kind = GateKind::spatial;
  int height = 0, width = 0, channels = 0;  // expected RoI feature (C, h, w)
  Conv2dParams<T> spatial_conv;             // spatial kind: 1x1, C -> 1
  DepthwiseSeparableParams<T> channel_conv;  // channel kind: depthwise h x w, pointwise C -> C
  FcParams<T> fc1, fc2;

  Shape input_shape() const { return {channels, height, width}; }
  Shape output_shape() const {
    return kind == GateKind::spatial ? Shape{1, height, width} : Shape{channels, 1, 1};
  }
};

template <typename T>
GateUnit<T> make_gate_unit(GateKind kind, int channels, int height, int width, Rng& rng,
                           double stddev = kGateInitStd, double fc2_bias = kGateOpenBias) {
  GateUnit<T> g;
  g.kind = kind;
  g.channels = channels;
  g.height = height;
  g.width = width;
  if (kind == GateKind::spatial) {
    const int n = height * width;
    const int hidden = spatial_gate_hidden(height, width);
    g.spatial_conv = make_conv<T>(channels, 1, 1, 1, 0, 1, stddev, rng);
    g.fc1 = make_fc<T>(n, hidden, stddev, rng);
    g.fc2 = make_fc<T>(hidden, n, stddev, rng, fc2_bias);
  } else if (kind == GateKind::channel) {
    const int hidden = channel_gate_hidden(channels);
    g.channel_conv.depthwise_kernel = gaussian_tensor<T>({channels, 1, height, width}, stddev, rng);
    g.channel_conv.depthwise_bias = constant_tensor<T>({channels}, 0.0);
    g.channel_conv.pointwise_kernel = gaussian_tensor<T>({channels, channels, 1, 1}, stddev, rng);
    g.channel_conv.pointwise_bias = constant_tensor<T>({channels}, 0.0);
    g.fc1 = make_fc<T>(channels, hidden, stddev, rng);
    g.fc2 = make_fc<T>(hidden, channels, stddev, rng, fc2_bias);
  } else {
    throw std::invalid_argument("make_gate_unit: gate kind must be spatial or channel");
  }
  return g;
}

template <typename T>
void register_params(ParamList<T>& list, const std::string& prefix, const GateUnit<T>& g) {
  if (g.kind == GateKind::spatial) {
    register_params(list, prefix + ".conv", g.spatial_conv);
  } else {
    register_params(list, prefix + ".conv", g.channel_conv);
  }
  register_params(list, prefix + ".fc1", g.fc1);
  register_params(list, prefix + ".fc2", g.fc2);
}

/// Gate coefficients for one pooled RoI feature: (1, h, w) for the spatial
/// kind, (C, 1, 1) for the channel kind, every entry in (0, 1).
template <typename T>
Tensor<T> gate_forward(const Tensor<T>& roi_feature, const GateUnit<T>& g) {
  if (roi_feature.shape() != g.input_shape()) {
    throw ShapeError("gate_forward: RoI feature " + shape_str(roi_feature.shape()) + " does not match gate input " +
                     shape_str(g.input_shape()));
  }
  Tensor<T> z = g.kind == GateKind::spatial ? conv2d(roi_feature, g.spatial_conv)
                                            : depthwise_separable_conv(roi_feature, g.channel_conv);
  z = relu(z);
  z = relu(fully_connected(z, g.fc1));
  z = sigmoid(fully_connected(z, g.fc2));
  return reshape(z, g.output_shape());
}

/// R_hat = G (x) R. G must be (1, h, w) or (C, 1, 1) against R = (C, h, w).
template <typename T>
Tensor<T> gate_modulate(const Tensor<T>& roi_feature, const Tensor<T>& gate) {
  const Shape& r = roi_feature.shape();
  const Shape& g = gate.shape();
  const bool spatial_form = g.size() == 3 && r.size() == 3 && g[0] == 1 && g[1] == r[1] && g[2] == r[2];
  const bool channel_form = g.size() == 3 && r.size() == 3 && g[0] == r[0] && g[1] == 1 && g[2] == 1;
  if (!spatial_form && !channel_form) {
    throw ShapeError("gate_modulate: gate " + shape_str(g) + " cannot modulate RoI feature " + shape_str(r));
  }
  return mul(roi_feature, gate);
}

/// Pooled RoI feature before (raw) and after (gated) modulation.
template <typename T>
struct RoiFeature {
  Tensor<T> raw;
  std::optional<Tensor<T>> gated;
};

struct GatedExtractorConfig {
  std::vector<int> blocks_used{1, 2, 3, 4, 5};  // 1-based backbone block indices
  int squeeze_ratio = 2;
  int roi_size = 7;
  GateKind gate_kind = GateKind::channel;
  // Squeeze kernel init; <= 0 picks sqrt(1 / C_in), which keeps the squeezed
  // maps at the scale of a from-scratch backbone's activations.
  double squeeze_std = 0.0;
  std::vector<int> block_strides{1, 2, 4, 8, 8};   // all backbone blocks
  std::vector<int> block_channels{8, 16, 32, 64, 64};

  void validate() const {
    if (blocks_used.empty()) throw std::invalid_argument("gated extractor: blocks_used must be non-empty");
    if (block_strides.size() != block_channels.size()) {
      throw std::invalid_argument("gated extractor: stride and channel lists differ in length");
    }
    for (std::size_t i = 0; i < blocks_used.size(); ++i) {
      const int b = blocks_used[i];
      if (b < 1 || b > static_cast<int>(block_channels.size())) {
        throw std::invalid_argument("gated extractor: block index " + std::to_string(b) + " out of range");
      }
      if (i > 0 && b <= blocks_used[i - 1]) {
        throw std::invalid_argument("gated extractor: blocks_used must be strictly increasing");
      }
    }
    if (roi_size < 1) throw std::invalid_argument("gated extractor: roi_size must be >= 1");
    for (int b : blocks_used) squeezed_channels(block_channels[static_cast<std::size_t>(b - 1)], squeeze_ratio);
  }

  int squeezed_channels_of(int block) const {
    return squeezed_channels(block_channels[static_cast<std::size_t>(block - 1)], squeeze_ratio);
  }

  int output_channels() const {
    int total = 0;
    for (int b : blocks_used) total += squeezed_channels_of(b);
    return total;
  }
};

template <typename T>
struct RoiExtraction {
  Tensor<T> fused;                 // (sum C_out, p, p)
  std::vector<RoiFeature<T>> per_block;
  std::vector<Tensor<T>> gates;    // one per used block
};

/// Squeeze units and gate units for every used block.
template <typename T>
class GatedExtractor {
 public:
  GatedExtractor() = default;

  GatedExtractor(GatedExtractorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.gate_kind == GateKind::none) {
      throw std::invalid_argument("gated extractor needs a spatial or channel gate kind");
    }
    for (int b : cfg_.blocks_used) {
      const int c_in = cfg_.block_channels[static_cast<std::size_t>(b - 1)];
      const double sq_std = cfg_.squeeze_std > 0 ? cfg_.squeeze_std : std::sqrt(1.0 / c_in);
      squeeze_.push_back(make_squeeze_unit<T>(c_in, cfg_.squeeze_ratio, rng, sq_std));
      gates_.push_back(make_gate_unit<T>(cfg_.gate_kind, squeeze_.back().out_channels(), cfg_.roi_size,
                                         cfg_.roi_size, rng));
    }
  }

  GatedExtractor(GatedExtractorConfig cfg, std::vector<SqueezeUnit<T>> squeeze, std::vector<GateUnit<T>> gates)
      : cfg_(std::move(cfg)), squeeze_(std::move(squeeze)), gates_(std::move(gates)) {
    cfg_.validate();
    if (squeeze_.size() != cfg_.blocks_used.size() || gates_.size() != cfg_.blocks_used.size()) {
      throw std::invalid_argument("gated extractor: need one squeeze and one gate unit per used block");
    }
  }

  const GatedExtractorConfig& config() const { return cfg_; }
  const std::vector<SqueezeUnit<T>>& squeeze_units() const { return squeeze_; }
  const std::vector<GateUnit<T>>& gate_units() const { return gates_; }
  int output_channels() const { return cfg_.output_channels(); }

  ParamList<T> parameters() const {
    ParamList<T> list;
    for (std::size_t i = 0; i < squeeze_.size(); ++i) {
      const std::string block = "block" + std::to_string(cfg_.blocks_used[i]);
      register_params(list, "squeeze." + block, squeeze_[i].filters);
      register_params(list, "gate." + block, gates_[i]);
    }
    return list;
  }

  /// Squeezes the used blocks of a full 5-block pyramid, once per image.
  std::vector<Tensor<T>> squeeze_pyramid(const std::vector<Tensor<T>>& pyramid) const {
    if (pyramid.size() != cfg_.block_channels.size()) {
      throw ShapeError("squeeze_pyramid: expected " + std::to_string(cfg_.block_channels.size()) +
                       " pyramid levels, got " + std::to_string(pyramid.size()));
    }
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < squeeze_.size(); ++i) {
      out.push_back(squeeze_apply(pyramid[static_cast<std::size_t>(cfg_.blocks_used[i] - 1)], squeeze_[i]));
    }
    return out;
  }

  /// Pool -> gate -> modulate per used block, then concatenate.
  RoiExtraction<T> extract_from_squeezed(const std::vector<Tensor<T>>& squeezed, const RoiBox& roi) const {
    if (squeezed.size() != squeeze_.size()) {
      throw ShapeError("extract_roi_features: expected " + std::to_string(squeeze_.size()) +
                       " squeezed maps, got " + std::to_string(squeezed.size()));
    }
    RoiExtraction<T> result;
    std::vector<Tensor<T>> parts;
    for (std::size_t i = 0; i < squeezed.size(); ++i) {
      const int stride = cfg_.block_strides[static_cast<std::size_t>(cfg_.blocks_used[i] - 1)];
      Tensor<T> pooled = roi_max_pool(squeezed[i], roi, cfg_.roi_size, 1.0 / stride);
      Tensor<T> gate = gate_forward(pooled, gates_[i]);
      Tensor<T> gated = gate_modulate(pooled, gate);
      parts.push_back(gated);
      result.per_block.push_back({pooled, gated});
      result.gates.push_back(gate);
    }
    result.fused = concat_channels(parts);
    return result;
  }

 private:
  GatedExtractorConfig cfg_;
  std::vector<SqueezeUnit<T>> squeeze_;
  std::vector<GateUnit<T>> gates_;
};

/// Full per-RoI pipeline from the raw backbone pyramid.
template <typename T>
Tensor<T> extract_roi_features(const std::vector<Tensor<T>>& pyramid, const RoiBox& roi,
                               const GatedExtractor<T>& extractor) {
  return extractor.extract_from_squeezed(extractor.squeeze_pyramid(pyramid), roi).fused;
}

}  // namespace gmlf
