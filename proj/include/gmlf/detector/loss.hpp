#pragma once

// Two-class cross-entropy plus smooth-L1 box regression on positives, both
// averaged over the N sampled RoIs.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "gmlf/autodiff/tensor.hpp"

namespace gmlf {

// double for float/double, wider when T is.
template <typename T>
using loss_acc_t = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

/// mean_i [ logsumexp(z_i) - z_i[y_i] ] over logits (N, K).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int n = logits.dim(0), k = logits.dim(1);
  using A = loss_acc_t<T>;
  std::vector<T> probs(logits.numel());
  A total = 0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::out_of_range("softmax_cross_entropy: label out of range");
    const T* z = logits.values().data() + static_cast<std::size_t>(i) * k;
    T zmax = z[0];
    for (int c = 1; c < k; ++c) zmax = std::max(zmax, z[c]);
    A denom = 0;
    for (int c = 0; c < k; ++c) denom += std::exp(static_cast<A>(z[c] - zmax));
    for (int c = 0; c < k; ++c) {
      probs[static_cast<std::size_t>(i) * k + c] = static_cast<T>(std::exp(static_cast<A>(z[c] - zmax)) / denom);
    }
    total += std::log(denom) + static_cast<A>(zmax - z[y]);
  }
  const T mean = static_cast<T>(total / n);
  return detail::make_result<T>({1}, {mean}, {logits.node()},
                                [probs = std::move(probs), labels, n, k](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  const T scale = self.grad[0] / static_cast<T>(n);
                                  for (int i = 0; i < n; ++i) {
                                    for (int c = 0; c < k; ++c) {
                                      const std::size_t idx = static_cast<std::size_t>(i) * k + c;
                                      const T onehot = c == labels[static_cast<std::size_t>(i)] ? T(1) : T(0);
                                      g[idx] += scale * (probs[idx] - onehot);
                                    }
                                  }
                                },
                                "softmax_cross_entropy");
}

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename R>
R smooth_l1_value(R x) {
  const R a = std::abs(x);
  return a < R(1) ? R(0.5) * x * x : a - R(0.5);
}

/// sum over rows with weight != 0 and over the 4 coordinates of
/// smooth_l1(delta - target) * weight, divided by `normalizer`.
template <typename T>
Tensor<T> smooth_l1_loss(const Tensor<T>& deltas, const std::vector<std::array<double, 4>>& targets,
                         const std::vector<double>& weights, double normalizer) {
  if (deltas.rank() != 2 || deltas.dim(1) != 4 || static_cast<std::size_t>(deltas.dim(0)) != targets.size() ||
      weights.size() != targets.size()) {
    throw ShapeError("smooth_l1_loss: deltas " + shape_str(deltas.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  if (!(normalizer > 0)) throw std::invalid_argument("smooth_l1_loss: normalizer must be positive");
  using A = loss_acc_t<T>;
  const int n = deltas.dim(0);
  A total = 0;
  std::vector<T> slope(deltas.numel(), T(0));
  for (int i = 0; i < n; ++i) {
    const A w = weights[static_cast<std::size_t>(i)];
    if (w == 0) continue;
    for (int c = 0; c < 4; ++c) {
      const std::size_t idx = static_cast<std::size_t>(i) * 4 + c;
      const A x = static_cast<A>(deltas[idx]) - targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      total += w * smooth_l1_value(x);
      slope[idx] = static_cast<T>(w * (std::abs(x) < A(1) ? x : (x > 0 ? A(1) : A(-1))) / normalizer);
    }
  }
  return detail::make_result<T>({1}, {static_cast<T>(total / normalizer)}, {deltas.node()},
                                [slope = std::move(slope)](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * slope[i];
                                },
                                "smooth_l1_loss");
}

template <typename T>
struct DetectionLoss {
  Tensor<T> total;
  double classification = 0;
  double regression = 0;
};

/// Cross-entropy over (N, 2) scores plus smooth-L1 over (N, 4) deltas for
/// label-1 rows; both terms averaged over N. No positives -> regression 0.
template <typename T>
DetectionLoss<T> detection_loss(const Tensor<T>& cls_scores, const Tensor<T>& box_deltas, const std::vector<int>& labels,
                                const std::vector<std::array<double, 4>>& regression_targets) {
  if (cls_scores.rank() != 2 || cls_scores.dim(1) != 2) {
    throw ShapeError("detection_loss: class scores must be (N, 2), got " + shape_str(cls_scores.shape()));
  }
  const std::size_t n = labels.size();
  if (static_cast<std::size_t>(cls_scores.dim(0)) != n || regression_targets.size() != n ||
      static_cast<std::size_t>(box_deltas.dim(0)) != n) {
    throw ShapeError("detection_loss: misaligned lengths");
  }
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = labels[i] == 1 ? 1.0 : 0.0;
  Tensor<T> cls = softmax_cross_entropy(cls_scores, labels);
  Tensor<T> reg = smooth_l1_loss(box_deltas, regression_targets, weights, static_cast<double>(n));
  return {add(cls, reg), static_cast<double>(cls.item()), static_cast<double>(reg.item())};
}

}  // namespace gmlf
