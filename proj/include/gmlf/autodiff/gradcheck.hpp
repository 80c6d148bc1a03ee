#pragma once

// Central finite-difference check of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/autodiff/tensor.hpp"

namespace gmlf {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped as kinks: the left and right one-sided slopes
  // disagree, so the function is not differentiable within eps.
  std::size_t skipped_kinks = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  // A coordinate is a kink when |slope_right - slope_left| exceeds
  // kink_threshold * max(1, |slope_right|, |slope_left|). Smooth coordinates
  // differ by O(eps * f''), far below this.
  double kink_threshold = 1e-2;
  bool skip_kinks = true;
};

namespace detail {

// Central differences of `f` over every element of `params`, compared with
// `analytic` (one vector per parameter). Arithmetic runs in R.
template <typename R>
GradCheckReport central_differences(const std::vector<std::vector<double>>& analytic,
                                    const std::function<Tensor<R>()>& f, std::vector<Tensor<R>>& params,
                                    const GradCheckOptions& opts) {
  const R eps = static_cast<R>(opts.eps);
  const R f0 = f().item();
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const R saved = values[i];
      values[i] = saved + eps;
      const R f_plus = f().item();
      values[i] = saved - eps;
      const R f_minus = f().item();
      values[i] = saved;

      if (opts.skip_kinks) {
        const double right = static_cast<double>((f_plus - f0) / eps);
        const double left = static_cast<double>((f0 - f_minus) / eps);
        const double scale = std::max({1.0, std::abs(right), std::abs(left)});
        if (std::abs(right - left) > opts.kink_threshold * scale) {
          ++report.skipped_kinks;
          continue;
        }
      }
      const double numeric = static_cast<double>((f_plus - f_minus) / (R(2) * eps));
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  return report;
}

inline std::vector<std::vector<double>> analytic_gradients(const std::function<Tensor<double>()>& loss_fn,
                                                           std::vector<Tensor<double>>& params) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> loss = loss_fn();
  if (loss.numel() != 1) {
    throw ShapeError("finite_diff_check: function output must be scalar, got " + shape_str(loss.shape()));
  }
  backward(loss);
  std::vector<std::vector<double>> out;
  for (auto& p : params) {
    out.emplace_back(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), out.back().begin());
    p.zero_grad();
  }
  return out;
}

}  // namespace detail

/// Compares backward() of `loss_fn` against central differences for every
/// element of every tensor in `params`. `loss_fn` must rebuild the graph from
/// the current parameter values on each call.
inline GradCheckReport finite_diff_report(const std::function<Tensor<double>()>& loss_fn,
                                          std::vector<Tensor<double>> params, GradCheckOptions opts = {}) {
  if (!(opts.eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  const auto analytic = detail::analytic_gradients(loss_fn, params);
  return detail::central_differences<double>(analytic, loss_fn, params, opts);
}

/// Mixed-precision form. Analytic gradients come from `loss_fn` in double;
/// the differences come from `reference_fn`, the same function rebuilt in R
/// over `reference_params` (same shapes and values). With R = long double
/// the quotient's rounding noise drops about three orders of magnitude, so
/// gradients near zero are still resolved to a small relative error.
template <typename R>
GradCheckReport finite_diff_report(const std::function<Tensor<double>()>& loss_fn,
                                   std::vector<Tensor<double>> params, const std::function<Tensor<R>()>& reference_fn,
                                   std::vector<Tensor<R>> reference_params, GradCheckOptions opts = {}) {
  if (!(opts.eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (params.size() != reference_params.size()) {
    throw std::invalid_argument("finite_diff_check: reference has a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != reference_params[i].shape()) {
      throw ShapeError("finite_diff_check: reference parameter " + std::to_string(i) + " has shape " +
                       shape_str(reference_params[i].shape()) + ", expected " + shape_str(params[i].shape()));
    }
    for (std::size_t k = 0; k < params[i].numel(); ++k) {
      if (static_cast<R>(params[i][k]) != reference_params[i][k]) {
        throw std::invalid_argument("finite_diff_check: reference parameter " + std::to_string(i) +
                                    " holds different values");
      }
    }
  }
  const auto analytic = detail::analytic_gradients(loss_fn, params);
  return detail::central_differences<R>(analytic, reference_fn, reference_params, opts);
}

/// Single-input form: `f` maps x to a scalar.
inline double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                const Tensor<double>& x, double eps, GradCheckOptions opts = {}) {
  opts.eps = eps;
  Tensor<double> leaf = x.clone_leaf(true);
  return finite_diff_report([&] { return f(leaf); }, {leaf}, opts).max_relative_error;
}

}  // namespace gmlf
