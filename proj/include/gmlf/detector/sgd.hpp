#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "gmlf/nn/params.hpp"

namespace gmlf {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (iterations, rate) stages run back to back.
  std::vector<std::pair<int, double>> lr_schedule{{1600, 1e-3}, {600, 1e-4}};
  int roi_batch = 64;

  void validate() const {
    if (lr_schedule.empty()) throw std::invalid_argument("sgd: learning-rate schedule is empty");
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
      if (lr_schedule[i].first < 0 || lr_schedule[i].second < 0) {
        throw std::invalid_argument("sgd: schedule entries must be non-negative");
      }
      if (i > 0 && lr_schedule[i].second > lr_schedule[i - 1].second) {
        throw std::invalid_argument("sgd: learning rates must be non-increasing");
      }
    }
    if (roi_batch < 1) throw std::invalid_argument("sgd: roi_batch must be >= 1");
  }

  int total_iterations() const {
    int n = 0;
    for (const auto& s : lr_schedule) n += s.first;
    return n;
  }

  /// Rate for 0-based iteration `it`; past the end the last rate holds.
  double learning_rate(int it) const {
    int end = 0;
    for (const auto& s : lr_schedule) {
      end += s.first;
      if (it < end) return s.second;
    }
    return lr_schedule.back().second;
  }
};

template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

/// v <- momentum * v + grad + weight_decay * param (no decay on biases);
/// param <- param - lr * v. Consumes and clears the gradients.
template <typename T>
void sgd_step(ParamList<T>& params, SgdState<T>& state, double lr, const SgdConfig& cfg) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), T(0));
  }
  if (state.velocity.size() != params.size()) throw std::invalid_argument("sgd_step: state does not match parameters");
  const T mom = static_cast<T>(cfg.momentum);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto values = p.tensor.mutable_values();
    auto& v = state.velocity[i];
    if (v.size() != values.size()) throw std::invalid_argument("sgd_step: velocity shape mismatch for " + p.name);
    const auto grad = p.tensor.grad();
    const bool has_grad = !grad.empty();
    const T decay = p.is_bias ? T(0) : static_cast<T>(cfg.weight_decay);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = has_grad ? grad[j] : T(0);
      v[j] = mom * v[j] + g + decay * values[j];
      values[j] -= rate * v[j];
    }
    p.tensor.zero_grad();
  }
}

}  // namespace gmlf
