#pragma once

// Parameter construction, initialization and named registries.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gmlf/nn/layers.hpp"

namespace gmlf {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool is_bias = false;  // biases are exempt from weight decay
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant_tensor(Shape shape, double value) {
  return Tensor<T>(std::move(shape), static_cast<T>(value), true);
}

/// Gaussian(0, stddev) kernel, zero bias.
template <typename T>
Conv2dParams<T> make_conv(int in_c, int out_c, int k, int stride, int padding, int dilation, double stddev,
                          Rng& rng) {
  return {gaussian_tensor<T>({out_c, in_c, k, k}, stddev, rng), constant_tensor<T>({out_c}, 0.0), stride, padding,
          dilation};
}

/// He-normal kernel (stddev = sqrt(2 / fan_in)), zero bias.
template <typename T>
Conv2dParams<T> make_conv_he(int in_c, int out_c, int k, int stride, int padding, int dilation, Rng& rng) {
  return make_conv<T>(in_c, out_c, k, stride, padding, dilation, std::sqrt(2.0 / (in_c * k * k)), rng);
}

template <typename T>
FcParams<T> make_fc(int in_f, int out_f, double stddev, Rng& rng, double bias = 0.0) {
  return {gaussian_tensor<T>({out_f, in_f}, stddev, rng), constant_tensor<T>({out_f}, bias)};
}

template <typename T>
void register_params(ParamList<T>& list, const std::string& prefix, const Conv2dParams<T>& p) {
  list.push_back({prefix + ".kernel", p.kernel, false});
  list.push_back({prefix + ".bias", p.bias, true});
}

template <typename T>
void register_params(ParamList<T>& list, const std::string& prefix, const FcParams<T>& p) {
  list.push_back({prefix + ".weight", p.weight, false});
  list.push_back({prefix + ".bias", p.bias, true});
}

template <typename T>
void register_params(ParamList<T>& list, const std::string& prefix, const DepthwiseSeparableParams<T>& p) {
  list.push_back({prefix + ".depthwise.kernel", p.depthwise_kernel, false});
  list.push_back({prefix + ".depthwise.bias", p.depthwise_bias, true});
  list.push_back({prefix + ".pointwise.kernel", p.pointwise_kernel, false});
  list.push_back({prefix + ".pointwise.bias", p.pointwise_bias, true});
}

}  // namespace gmlf
