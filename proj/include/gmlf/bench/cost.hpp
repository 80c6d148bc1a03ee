#pragma once

// Closed-form parameter and multiply-accumulate counts.
//
//   conv k x k, C_in -> C_out:          params C_out*C_in*k*k + C_out
//   depthwise k x k on C + pointwise:   params C*k*k + C + C*C + C
//   fc in -> out:                       params in*out + out
//
// MACs count the products of conv / fc layers and of the gate modulation;
// pooling, activations and bias additions are not counted.

#include <cstdint>
#include <string>
#include <vector>

#include "gmlf/detector/detector.hpp"

namespace gmlf {

struct CostEntry {
  std::string name;        // parameter-name prefix, e.g. "gate.block3"
  std::uint64_t params = 0;
  std::uint64_t macs = 0;  // per image for backbone/squeeze, per RoI otherwise
  bool per_roi = false;
};

struct CostReport {
  std::vector<CostEntry> entries;
  std::uint64_t backbone_params = 0;
  std::uint64_t squeeze_params = 0;
  std::uint64_t gate_params = 0;
  std::uint64_t head_params = 0;
  std::uint64_t image_macs = 0;  // backbone + squeeze, once per image
  std::uint64_t roi_macs = 0;    // gates + modulation + head, per RoI

  std::uint64_t total_params() const { return backbone_params + squeeze_params + gate_params + head_params; }
  /// Everything downstream of the squeezed maps that runs once per RoI.
  std::uint64_t roi_subnetwork_params() const { return gate_params + head_params; }
  std::uint64_t macs_per_image(int rois) const { return image_macs + roi_macs * static_cast<std::uint64_t>(rois); }
};

constexpr std::uint64_t conv_params(std::uint64_t in_c, std::uint64_t out_c, std::uint64_t k) {
  return out_c * in_c * k * k + out_c;
}
constexpr std::uint64_t fc_params(std::uint64_t in_f, std::uint64_t out_f) { return in_f * out_f + out_f; }
constexpr std::uint64_t dwsep_params(std::uint64_t c, std::uint64_t kh, std::uint64_t kw, std::uint64_t out_c) {
  return c * kh * kw + c + out_c * c + out_c;
}

inline CostReport count_cost(const ModelConfig& cfg, int image_height = 256, int image_width = 512) {
  cfg.validate();
  CostReport r;
  using U = std::uint64_t;
  const auto strides = cfg.backbone.strides();
  const U p = static_cast<U>(cfg.roi_size);

  int in_c = cfg.backbone.in_channels;
  for (int b = 0; b < kNumBlocks; ++b) {
    const U hw = static_cast<U>(image_height / strides[b]) * static_cast<U>(image_width / strides[b]);
    for (int i = 0; i < cfg.backbone.convs[b]; ++i) {
      const U out_c = static_cast<U>(cfg.backbone.channels[b]);
      CostEntry e{"backbone.block" + std::to_string(b + 1) + ".conv" + std::to_string(i + 1),
                  conv_params(static_cast<U>(in_c), out_c, 3), hw * out_c * static_cast<U>(in_c) * 9, false};
      r.backbone_params += e.params;
      r.image_macs += e.macs;
      r.entries.push_back(e);
      in_c = cfg.backbone.channels[b];
    }
  }

  if (cfg.gate_kind != GateKind::none) {
    const auto ex = cfg.extractor_config();
    for (int b : ex.blocks_used) {
      const U c_in = static_cast<U>(cfg.backbone.channels[static_cast<std::size_t>(b - 1)]);
      const U c = static_cast<U>(ex.squeezed_channels_of(b));
      const U hw = static_cast<U>(image_height / strides[static_cast<std::size_t>(b - 1)]) *
                   static_cast<U>(image_width / strides[static_cast<std::size_t>(b - 1)]);
      const std::string block = "block" + std::to_string(b);
      CostEntry sq{"squeeze." + block, conv_params(c_in, c, 1), hw * c_in * c, false};
      r.squeeze_params += sq.params;
      r.image_macs += sq.macs;
      r.entries.push_back(sq);

      CostEntry g{"gate." + block, 0, 0, true};
      if (cfg.gate_kind == GateKind::spatial) {
        const U n = p * p;
        const U hid = static_cast<U>(spatial_gate_hidden(cfg.roi_size, cfg.roi_size));
        g.params = conv_params(c, 1, 1) + fc_params(n, hid) + fc_params(hid, n);
        g.macs = n * c + n * hid + hid * n;
      } else {
        const U hid = static_cast<U>(channel_gate_hidden(static_cast<int>(c)));
        g.params = dwsep_params(c, p, p, c) + fc_params(c, hid) + fc_params(hid, c);
        g.macs = c * p * p + c * c + c * hid + hid * c;
      }
      g.macs += c * p * p;  // modulation
      r.gate_params += g.params;
      r.roi_macs += g.macs;
      r.entries.push_back(g);
    }
  }

  const U in = static_cast<U>(cfg.head_input());
  const U hid = static_cast<U>(cfg.head_hidden);
  const std::vector<std::pair<std::string, std::pair<U, U>>> head{
      {"head.fc1", {in, hid}}, {"head.fc2", {hid, hid}}, {"head.cls", {hid, 2}}, {"head.reg", {hid, 4}}};
  for (const auto& [name, io] : head) {
    CostEntry e{name, fc_params(io.first, io.second), io.first * io.second, true};
    r.head_params += e.params;
    r.roi_macs += e.macs;
    r.entries.push_back(e);
  }
  return r;
}

}  // namespace gmlf
