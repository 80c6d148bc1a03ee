#pragma once

// Five-block convolutional backbone. Block b max-pools by its downsample
// factor, then runs its 3x3 conv + ReLU stack. The last block keeps block 4's
// stride and dilates its convolutions instead.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/nn/layers.hpp"
#include "gmlf/nn/params.hpp"

namespace gmlf {

constexpr int kNumBlocks = 5;

struct BackboneConfig {
  int in_channels = 3;
  std::array<int, kNumBlocks> channels{8, 16, 32, 64, 64};
  std::array<int, kNumBlocks> convs{2, 2, 2, 2, 2};
  std::array<int, kNumBlocks> downsample{1, 2, 2, 2, 1};
  int final_dilation = 2;

  void validate() const {
    for (int b = 0; b < kNumBlocks; ++b) {
      if (channels[b] < 1 || convs[b] < 1 || downsample[b] < 1) {
        throw std::invalid_argument("backbone: block " + std::to_string(b + 1) +
                                    " needs positive channels, convs and downsample");
      }
    }
    for (int b = 1; b < kNumBlocks - 1; ++b) {
      if (downsample[b] < 2) {
        throw std::invalid_argument("backbone: blocks 2-4 must downsample so strides strictly increase");
      }
    }
    if (downsample[kNumBlocks - 1] != 1) {
      throw std::invalid_argument("backbone: the final block must keep block 4's stride (downsample 1)");
    }
    if (final_dilation < 1) throw std::invalid_argument("backbone: final dilation must be >= 1");
  }

  std::array<int, kNumBlocks> strides() const {
    std::array<int, kNumBlocks> s{};
    int acc = 1;
    for (int b = 0; b < kNumBlocks; ++b) {
      acc *= downsample[b];
      s[b] = acc;
    }
    return s;
  }

  int max_stride() const { return strides()[kNumBlocks - 1]; }

  int dilation_of(int block_index) const { return block_index == kNumBlocks - 1 ? final_dilation : 1; }

  std::vector<int> channel_list() const { return {channels.begin(), channels.end()}; }
  std::vector<int> stride_list() const {
    auto s = strides();
    return {s.begin(), s.end()};
  }
};

/// Receptive field (in input pixels) of one unit at the output of each block,
/// by the usual recurrence rf += (k_eff - 1) * jump; jump *= stride.
inline std::array<int, kNumBlocks> receptive_fields(const BackboneConfig& cfg) {
  std::array<int, kNumBlocks> rf{};
  int field = 1, jump = 1;
  for (int b = 0; b < kNumBlocks; ++b) {
    if (cfg.downsample[b] > 1) {
      field += (cfg.downsample[b] - 1) * jump;
      jump *= cfg.downsample[b];
    }
    const int k_eff = cfg.dilation_of(b) * (3 - 1) + 1;
    for (int i = 0; i < cfg.convs[b]; ++i) field += (k_eff - 1) * jump;
    rf[b] = field;
  }
  return rf;
}

template <typename T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(BackboneConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int in_c = cfg_.in_channels;
    for (int b = 0; b < kNumBlocks; ++b) {
      const int d = cfg_.dilation_of(b);
      for (int i = 0; i < cfg_.convs[b]; ++i) {
        convs_[b].push_back(make_conv_he<T>(in_c, cfg_.channels[b], 3, 1, d, d, rng));
        in_c = cfg_.channels[b];
      }
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<Conv2dParams<T>>& block(int b) const { return convs_[static_cast<std::size_t>(b)]; }

  ParamList<T> parameters() const {
    ParamList<T> list;
    for (int b = 0; b < kNumBlocks; ++b) {
      for (std::size_t i = 0; i < convs_[b].size(); ++i) {
        register_params(list, "backbone.block" + std::to_string(b + 1) + ".conv" + std::to_string(i + 1),
                        convs_[b][i]);
      }
    }
    return list;
  }

  /// One feature map per block.
  std::vector<Tensor<T>> forward(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != cfg_.in_channels) {
      throw ShapeError("backbone: expected a (" + std::to_string(cfg_.in_channels) + ",H,W) image, got " +
                       shape_str(image.shape()));
    }
    const int s = cfg_.max_stride();
    if (image.dim(1) % s != 0 || image.dim(2) % s != 0) {
      throw ShapeError("backbone: image size " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                       " is not divisible by the maximum stride " + std::to_string(s) +
                       "; pad the image to a multiple of it");
    }
    std::vector<Tensor<T>> pyramid;
    Tensor<T> x = image;
    for (int b = 0; b < kNumBlocks; ++b) {
      if (cfg_.downsample[b] > 1) x = max_pool2d(x, cfg_.downsample[b], cfg_.downsample[b]);
      for (const auto& conv : convs_[b]) x = relu(conv2d(x, conv));
      pyramid.push_back(x);
    }
    return pyramid;
  }

 private:
  BackboneConfig cfg_;
  std::array<std::vector<Conv2dParams<T>>, kNumBlocks> convs_;
};

template <typename T>
std::vector<Tensor<T>> backbone_forward(const Tensor<T>& image, const Backbone<T>& backbone) {
  return backbone.forward(image);
}

}  // namespace gmlf
