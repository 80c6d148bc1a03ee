#pragma once

// Differentiable network layers over channels-major feature maps (C, H, W).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gmlf/autodiff/tensor.hpp"
#include "gmlf/box.hpp"

namespace gmlf {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline int conv_output_size(int in, int kernel, int stride, int padding, int dilation) {
  const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

template <typename T>
struct Conv2dParams {
  Tensor<T> kernel;  // (out_channels, in_channels, kh, kw)
  Tensor<T> bias;    // (out_channels)
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  int out_channels() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int kernel_h() const { return kernel.dim(2); }
  int kernel_w() const { return kernel.dim(3); }
};

template <typename T>
struct DepthwiseSeparableParams {
  Tensor<T> depthwise_kernel;  // (channels, 1, kh, kw)
  Tensor<T> depthwise_bias;    // (channels)
  Tensor<T> pointwise_kernel;  // (out_channels, channels, 1, 1)
  Tensor<T> pointwise_bias;    // (out_channels)
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

template <typename T>
struct FcParams {
  Tensor<T> weight;  // (out_features, in_features)
  Tensor<T> bias;    // (out_features)

  int out_features() const { return weight.dim(0); }
  int in_features() const { return weight.dim(1); }
};

namespace detail {

struct ConvGeometry {
  int channels, height, width;
  int kh, kw, stride, padding, dilation;
  int out_h, out_w;
};

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
                     shape_str(s));
  }
}

// Output rows per im2col tile, sized so a tile of the column buffer stays
// around 64k elements.
inline int conv_tile_rows(const ConvGeometry& g, int patch) {
  const long per_row = static_cast<long>(patch) * g.out_w;
  return static_cast<int>(std::clamp<long>(65536 / std::max<long>(per_row, 1), 1, g.out_h));
}

inline std::vector<int> all_taps(const ConvGeometry& g) {
  std::vector<int> taps(static_cast<std::size_t>(g.kh) * g.kw);
  for (std::size_t t = 0; t < taps.size(); ++t) taps[t] = static_cast<int>(t);
  return taps;
}

// im2col restricted to output rows [row0, row0 + rows) and to the listed
// kernel taps (index i * kw + j). Row c * taps.size() + t holds tap t of
// channel c.
template <typename T>
void im2col_rows(const T* in, const ConvGeometry& g, const std::vector<int>& taps, int row0, int rows, T* col) {
  const int cols = rows * g.out_w;
  const std::size_t nt = taps.size();
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.height * g.width;
    for (std::size_t t = 0; t < nt; ++t) {
      const int i = taps[t] / g.kw, j = taps[t] % g.kw;
      {
        T* row = col + (static_cast<std::size_t>(c) * nt + t) * cols;
        const int x0 = -g.padding + j * g.dilation;
        for (int r = 0; r < rows; ++r) {
          const int y = (row0 + r) * g.stride - g.padding + i * g.dilation;
          T* dst = row + r * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * g.width;
          if (g.stride == 1) {
            const int lo = std::clamp(-x0, 0, g.out_w);
            const int hi = std::clamp(g.width - x0, 0, g.out_w);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::copy(src + x0 + lo, src + x0 + hi, dst + lo);
            std::fill(dst + std::max(hi, lo), dst + g.out_w, T(0));
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int x = ox * g.stride + x0;
              dst[ox] = (x >= 0 && x < g.width) ? src[x] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_rows_add(const T* col, const ConvGeometry& g, const std::vector<int>& taps, int row0, int rows, T* in) {
  const int cols = rows * g.out_w;
  const std::size_t nt = taps.size();
  for (int c = 0; c < g.channels; ++c) {
    T* plane = in + static_cast<std::size_t>(c) * g.height * g.width;
    for (std::size_t t = 0; t < nt; ++t) {
      const int i = taps[t] / g.kw, j = taps[t] % g.kw;
      {
        const T* row = col + (static_cast<std::size_t>(c) * nt + t) * cols;
        const int x0 = -g.padding + j * g.dilation;
        for (int r = 0; r < rows; ++r) {
          const int y = (row0 + r) * g.stride - g.padding + i * g.dilation;
          if (y < 0 || y >= g.height) continue;
          T* dst = plane + static_cast<std::size_t>(y) * g.width;
          const T* src = row + r * g.out_w;
          if (g.stride == 1) {
            const int lo = std::clamp(-x0, 0, g.out_w);
            const int hi = std::clamp(g.width - x0, 0, g.out_w);
            for (int ox = lo; ox < hi; ++ox) dst[ox + x0] += src[ox];
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int x = ox * g.stride + x0;
              if (x >= 0 && x < g.width) dst[x] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with stride, zero padding and dilation. Computed tile by
/// tile over output rows as (kernel matrix) x (im2col tile); the backward pass
/// rebuilds each tile instead of keeping the whole column buffer alive.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p) {
  detail::require_rank(input.shape(), 3, "conv2d input");
  detail::require_rank(p.kernel.shape(), 4, "conv2d kernel");
  if (input.dim(0) != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) + " channels, kernel " +
                     shape_str(p.kernel.shape()) + " expects " + std::to_string(p.in_channels()));
  }
  if (p.bias.numel() != static_cast<std::size_t>(p.out_channels())) {
    throw ShapeError("conv2d: bias " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(p.out_channels()) + " output channels");
  }
  if (p.stride < 1 || p.dilation < 1 || p.padding < 0) {
    throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), p.kernel_h(), p.kernel_w(),
                         p.stride,     p.padding,   p.dilation,  0,           0};
  g.out_h = conv_output_size(g.height, g.kh, g.stride, g.padding, g.dilation);
  g.out_w = conv_output_size(g.width, g.kw, g.stride, g.padding, g.dilation);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: empty output for input " + shape_str(input.shape()) + " and kernel " +
                     shape_str(p.kernel.shape()));
  }
  const int out_c = p.out_channels();
  const int taps_n = g.kh * g.kw;
  const int patch = g.channels * taps_n;
  const int out_hw = g.out_h * g.out_w;
  const bool pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0;

  // The forward product leaves out taps that are zero for every channel
  // pair. A zero-inserted copy of a dilated kernel then runs the very same
  // product as the dilated kernel, so the two agree bit for bit.
  const auto kv = p.kernel.values();
  std::vector<int> live;
  for (int t = 0; t < taps_n; ++t) {
    bool any = false;
    for (int oc = 0; oc < out_c * g.channels && !any; ++oc) any = kv[static_cast<std::size_t>(oc) * taps_n + t] != T(0);
    if (any) live.push_back(t);
  }
  const int live_patch = g.channels * static_cast<int>(live.size());
  std::vector<T> compact;
  if (static_cast<int>(live.size()) < taps_n) {
    compact.resize(static_cast<std::size_t>(out_c) * live_patch);
    for (int oc = 0; oc < out_c * g.channels; ++oc) {
      for (std::size_t t = 0; t < live.size(); ++t) {
        compact[static_cast<std::size_t>(oc) * live.size() + t] =
            kv[static_cast<std::size_t>(oc) * taps_n + static_cast<std::size_t>(live[t])];
      }
    }
  }

  std::vector<T> out(static_cast<std::size_t>(out_c) * out_hw, T(0));
  MatrixMap<T> out_m(out.data(), out_c, out_hw);
  ConstMatrixMap<T> k_live(compact.empty() ? kv.data() : compact.data(), out_c, live_patch);
  if (live.empty()) {
    // all-zero kernel: the output is the bias
  } else if (pointwise) {
    ConstMatrixMap<T> x_m(input.values().data(), patch, out_hw);
    out_m.noalias() = k_live * x_m;
  } else {
    const int tile = detail::conv_tile_rows(g, live_patch);
    std::vector<T> col(static_cast<std::size_t>(live_patch) * tile * g.out_w);
    for (int r0 = 0; r0 < g.out_h; r0 += tile) {
      const int rows = std::min(tile, g.out_h - r0);
      const int cols = rows * g.out_w;
      detail::im2col_rows(input.values().data(), g, live, r0, rows, col.data());
      ConstMatrixMap<T> col_m(col.data(), live_patch, cols);
      out_m.middleCols(static_cast<Eigen::Index>(r0) * g.out_w, cols).noalias() = k_live * col_m;
    }
  }
  for (int o = 0; o < out_c; ++o) out_m.row(o).array() += p.bias[static_cast<std::size_t>(o)];

  return detail::make_result<T>(
      {out_c, g.out_h, g.out_w}, std::move(out), {input.node(), p.kernel.node(), p.bias.node()},
      [g, patch, out_c, out_hw, pointwise](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& kernel = *self.inputs[1];
        Node<T>& bias = *self.inputs[2];
        ConstMatrixMap<T> dout(self.grad.data(), out_c, out_hw);
        ConstMatrixMap<T> k_m(kernel.value.data(), out_c, patch);
        if (bias.requires_grad) {
          auto& db = bias.grad_buffer();
          // Plain loops: Eigen's vectorized sum() peels by address alignment,
          // which makes the rounding differ between otherwise identical runs.
          for (int o = 0; o < out_c; ++o) {
            const T* row = self.grad.data() + static_cast<std::size_t>(o) * out_hw;
            T acc = T(0);
            for (int i = 0; i < out_hw; ++i) acc += row[i];
            db[static_cast<std::size_t>(o)] += acc;
          }
        }
        if (pointwise) {
          ConstMatrixMap<T> x_m(in.value.data(), patch, out_hw);
          if (kernel.requires_grad) {
            MatrixMap<T> dk(kernel.grad_buffer().data(), out_c, patch);
            dk.noalias() += dout * x_m.transpose();
          }
          if (in.requires_grad) {
            MatrixMap<T> din(in.grad_buffer().data(), patch, out_hw);
            din.noalias() += k_m.transpose() * dout;
          }
          return;
        }
        // Every tap here: zero weights still receive gradients.
        const auto taps = detail::all_taps(g);
        const int tile = detail::conv_tile_rows(g, patch);
        std::vector<T> col(static_cast<std::size_t>(patch) * tile * g.out_w);
        T* din = in.requires_grad ? in.grad_buffer().data() : nullptr;
        for (int r0 = 0; r0 < g.out_h; r0 += tile) {
          const int rows = std::min(tile, g.out_h - r0);
          const int cols = rows * g.out_w;
          auto dout_tile = dout.middleCols(static_cast<Eigen::Index>(r0) * g.out_w, cols);
          if (kernel.requires_grad) {
            detail::im2col_rows(in.value.data(), g, taps, r0, rows, col.data());
            ConstMatrixMap<T> col_m(col.data(), patch, cols);
            MatrixMap<T> dk(kernel.grad_buffer().data(), out_c, patch);
            dk.noalias() += dout_tile * col_m.transpose();
          }
          if (din) {
            MatrixMap<T> dcol(col.data(), patch, cols);
            dcol.noalias() = k_m.transpose() * dout_tile;
            detail::col2im_rows_add(col.data(), g, taps, r0, rows, din);
          }
        }
      },
      "conv2d");
}

/// Per-channel spatial convolution: output channel c sees only input channel c.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride = 1,
                           int padding = 0, int dilation = 1) {
  detail::require_rank(input.shape(), 3, "depthwise_conv2d input");
  detail::require_rank(kernel.shape(), 4, "depthwise_conv2d kernel");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (kernel.dim(0) != C || kernel.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                     shape_str(input.shape()) + " (expected (C,1,kh,kw))");
  }
  if (bias.numel() != static_cast<std::size_t>(C)) {
    throw ShapeError("depthwise_conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(C) +
                     " channels");
  }
  const int kh = kernel.dim(2), kw = kernel.dim(3);
  const int oh = conv_output_size(H, kh, stride, padding, dilation);
  const int ow = conv_output_size(W, kw, stride, padding, dilation);
  if (oh < 1 || ow < 1) {
    throw ShapeError("depthwise_conv2d: empty output for input " + shape_str(input.shape()) + " and kernel " +
                     shape_str(kernel.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(C) * oh * ow);
  const auto x = input.values();
  const auto k = kernel.values();
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias[static_cast<std::size_t>(c)];
        for (int i = 0; i < kh; ++i) {
          const int y = oy * stride - padding + i * dilation;
          if (y < 0 || y >= H) continue;
          for (int j = 0; j < kw; ++j) {
            const int xx = ox * stride - padding + j * dilation;
            if (xx < 0 || xx >= W) continue;
            acc += k[(static_cast<std::size_t>(c) * kh + i) * kw + j] * x[(static_cast<std::size_t>(c) * H + y) * W + xx];
          }
        }
        out[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return detail::make_result<T>(
      {C, oh, ow}, std::move(out), {input.node(), kernel.node(), bias.node()},
      [C, H, W, kh, kw, oh, ow, stride, padding, dilation](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& kn = *self.inputs[1];
        Node<T>& bn = *self.inputs[2];
        T* din = in.requires_grad ? in.grad_buffer().data() : nullptr;
        T* dk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
        T* db = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const T go = self.grad[(static_cast<std::size_t>(c) * oh + oy) * ow + ox];
              if (db) db[c] += go;
              for (int i = 0; i < kh; ++i) {
                const int y = oy * stride - padding + i * dilation;
                if (y < 0 || y >= H) continue;
                for (int j = 0; j < kw; ++j) {
                  const int xx = ox * stride - padding + j * dilation;
                  if (xx < 0 || xx >= W) continue;
                  const std::size_t ki = (static_cast<std::size_t>(c) * kh + i) * kw + j;
                  const std::size_t xi = (static_cast<std::size_t>(c) * H + y) * W + xx;
                  if (dk) dk[ki] += go * in.value[xi];
                  if (din) din[xi] += go * kn.value[ki];
                }
              }
            }
          }
        }
      },
      "depthwise_conv2d");
}

/// Depthwise stage followed by a 1x1 pointwise stage. With an h x w depthwise
/// kernel on an h x w input and no padding the output collapses to (C_out,1,1).
template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& input, const DepthwiseSeparableParams<T>& p) {
  Tensor<T> depth = depthwise_conv2d(input, p.depthwise_kernel, p.depthwise_bias, p.stride, p.padding, p.dilation);
  Conv2dParams<T> pw{p.pointwise_kernel, p.pointwise_bias, 1, 0, 1};
  return conv2d(depth, pw);
}

/// weight * flatten(input) + bias.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const FcParams<T>& p) {
  const int out_f = p.out_features();
  const int in_f = p.in_features();
  if (input.numel() != static_cast<std::size_t>(in_f)) {
    throw ShapeError("fully_connected: expected " + std::to_string(in_f) + " input features, got " +
                     std::to_string(input.numel()) + " from shape " + shape_str(input.shape()));
  }
  if (p.bias.numel() != static_cast<std::size_t>(out_f)) {
    throw ShapeError("fully_connected: bias " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(out_f) + " outputs");
  }
  std::vector<T> out(static_cast<std::size_t>(out_f));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> out_v(out.data(), out_f);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(input.values().data(), in_f);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(p.bias.values().data(), out_f);
  ConstMatrixMap<T> w(p.weight.values().data(), out_f, in_f);
  out_v.noalias() = w * x;
  out_v += b;
  return detail::make_result<T>(
      {out_f}, std::move(out), {input.node(), p.weight.node(), p.bias.node()},
      [out_f, in_f](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& wn = *self.inputs[1];
        Node<T>& bn = *self.inputs[2];
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> go(self.grad.data(), out_f);
        if (wn.requires_grad) {
          MatrixMap<T> dw(wn.grad_buffer().data(), out_f, in_f);
          Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> x(in.value.data(), in_f);
          dw.noalias() += go * x.transpose();
        }
        if (bn.requires_grad) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bn.grad_buffer().data(), out_f);
          db += go;
        }
        if (in.requires_grad) {
          ConstMatrixMap<T> w(wn.value.data(), out_f, in_f);
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dx(in.grad_buffer().data(), in_f);
          dx.noalias() += w.transpose() * go;
        }
      },
      "fully_connected");
}

/// Row-wise fully connected layer: (N, in) -> (N, out), each row mapped
/// independently. Used to run the per-RoI head as one matrix product.
template <typename T>
Tensor<T> fully_connected_rows(const Tensor<T>& input, const FcParams<T>& p) {
  if (input.rank() < 2) throw ShapeError("fully_connected_rows: expected (N, ...) input, got " + shape_str(input.shape()));
  const int rows = input.dim(0);
  const int in_f = p.in_features();
  const int out_f = p.out_features();
  if (input.numel() != static_cast<std::size_t>(rows) * in_f) {
    throw ShapeError("fully_connected_rows: expected " + std::to_string(in_f) + " features per row, input is " +
                     shape_str(input.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(rows) * out_f);
  MatrixMap<T> y(out.data(), rows, out_f);
  ConstMatrixMap<T> x(input.values().data(), rows, in_f);
  ConstMatrixMap<T> w(p.weight.values().data(), out_f, in_f);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(p.bias.values().data(), out_f);
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return detail::make_result<T>(
      {rows, out_f}, std::move(out), {input.node(), p.weight.node(), p.bias.node()},
      [rows, in_f, out_f](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& wn = *self.inputs[1];
        Node<T>& bn = *self.inputs[2];
        ConstMatrixMap<T> gy(self.grad.data(), rows, out_f);
        if (wn.requires_grad) {
          ConstMatrixMap<T> x(in.value.data(), rows, in_f);
          MatrixMap<T> dw(wn.grad_buffer().data(), out_f, in_f);
          dw.noalias() += gy.transpose() * x;
        }
        if (bn.requires_grad) {
          auto& db = bn.grad_buffer();
          for (int r = 0; r < rows; ++r) {
            for (int o = 0; o < out_f; ++o) db[static_cast<std::size_t>(o)] += self.grad[static_cast<std::size_t>(r) * out_f + o];
          }
        }
        if (in.requires_grad) {
          ConstMatrixMap<T> w(wn.value.data(), out_f, in_f);
          MatrixMap<T> dx(in.grad_buffer().data(), rows, in_f);
          dx.noalias() += gy * w;
        }
      },
      "fully_connected_rows");
}

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    if (in.value[i] > T(0)) g[i] += self.grad[i];
                                  }
                                },
                                "relu");
}

/// 1 / (1 + e^-x), clamped to the open interval (0, 1) so saturated inputs
/// still produce a representable gate strictly inside the range.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    out[i] = std::clamp(s, lo, hi);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    const T s = self.value[i];
                                    g[i] += self.grad[i] * s * (T(1) - s);
                                  }
                                },
                                "sigmoid");
}

/// Non-overlapping or strided max pooling without padding. Ties go to the
/// first element in row-major scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int window, int stride) {
  detail::require_rank(input.shape(), 3, "max_pool2d input");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (window < 1 || stride < 1) throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
  if (window > H || window > W) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " larger than input " +
                     shape_str(input.shape()));
  }
  const int oh = (H - window) / stride + 1;
  const int ow = (W - window) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(C) * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.values();
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = (static_cast<std::size_t>(c) * H + oy * stride) * W + ox * stride;
        for (int i = 0; i < window; ++i) {
          for (int j = 0; j < window; ++j) {
            const std::size_t idx = (static_cast<std::size_t>(c) * H + oy * stride + i) * W + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return detail::make_result<T>({C, oh, ow}, std::move(out), {input.node()},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                                },
                                "max_pool2d");
}

/// Integer cell window of a RoI on a feature map: rows [y0, y1), cols [x0, x1).
struct RoiCells {
  int x0, y0, x1, y1;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
};

/// Scales the RoI to feature coordinates, floors the start and ceils the end,
/// and clips to the map. A window that snaps to zero area is widened to one
/// cell. Throws when the RoI lies entirely outside the map.
inline RoiCells snap_roi(const RoiBox& roi, double spatial_scale, int map_h, int map_w) {
  if (!(roi.x2 > roi.x1) || !(roi.y2 > roi.y1)) {
    throw std::invalid_argument("roi_max_pool: RoI must have positive width and height");
  }
  const double fx1 = roi.x1 * spatial_scale, fy1 = roi.y1 * spatial_scale;
  const double fx2 = roi.x2 * spatial_scale, fy2 = roi.y2 * spatial_scale;
  if (fx2 <= 0.0 || fy2 <= 0.0 || fx1 >= map_w || fy1 >= map_h) {
    throw std::out_of_range("roi_max_pool: RoI lies entirely outside the " + std::to_string(map_h) + "x" +
                            std::to_string(map_w) + " feature map");
  }
  RoiCells cells{static_cast<int>(std::floor(fx1)), static_cast<int>(std::floor(fy1)),
                 static_cast<int>(std::ceil(fx2)), static_cast<int>(std::ceil(fy2))};
  cells.x0 = std::clamp(cells.x0, 0, map_w - 1);
  cells.y0 = std::clamp(cells.y0, 0, map_h - 1);
  cells.x1 = std::clamp(cells.x1, cells.x0 + 1, map_w);
  cells.y1 = std::clamp(cells.y1, cells.y0 + 1, map_h);
  return cells;
}

/// Bin `index` of `bins` over a window of `extent` cells: [floor(i*n/p), ceil((i+1)*n/p)).
inline std::pair<int, int> roi_bin_range(int index, int bins, int extent) {
  const double size = static_cast<double>(extent) / bins;
  return {static_cast<int>(std::floor(index * size)), static_cast<int>(std::ceil((index + 1) * size))};
}

/// Classic quantized RoI max pooling to (C, out_size, out_size).
template <typename T>
Tensor<T> roi_max_pool(const Tensor<T>& feature, const RoiBox& roi, int out_size, double spatial_scale) {
  detail::require_rank(feature.shape(), 3, "roi_max_pool feature");
  if (out_size < 1) throw std::invalid_argument("roi_max_pool: output size must be >= 1");
  const int C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
  const RoiCells cells = snap_roi(roi, spatial_scale, H, W);
  const int p = out_size;
  constexpr std::size_t kEmpty = std::numeric_limits<std::size_t>::max();
  std::vector<T> out(static_cast<std::size_t>(C) * p * p, T(0));
  std::vector<std::size_t> argmax(out.size(), kEmpty);
  const auto x = feature.values();
  for (int py = 0; py < p; ++py) {
    auto [ys, ye] = roi_bin_range(py, p, cells.height());
    ys = std::min(ys + cells.y0, cells.y1);
    ye = std::min(ye + cells.y0, cells.y1);
    for (int px = 0; px < p; ++px) {
      auto [xs, xe] = roi_bin_range(px, p, cells.width());
      xs = std::min(xs + cells.x0, cells.x1);
      xe = std::min(xe + cells.x0, cells.x1);
      if (ye <= ys || xe <= xs) continue;
      for (int c = 0; c < C; ++c) {
        std::size_t best = (static_cast<std::size_t>(c) * H + ys) * W + xs;
        for (int y = ys; y < ye; ++y) {
          for (int xx = xs; xx < xe; ++xx) {
            const std::size_t idx = (static_cast<std::size_t>(c) * H + y) * W + xx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * p + py) * p + px;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return detail::make_result<T>({C, p, p}, std::move(out), {feature.node()},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t o = 0; o < argmax.size(); ++o) {
                                    if (argmax[o] != kEmpty) g[argmax[o]] += self.grad[o];
                                  }
                                },
                                "roi_max_pool");
}

/// Stacks (C_i, h, w) maps along the channel axis in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = inputs[0].dim(1), w = inputs[0].dim(2);
  int channels = 0;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& t : inputs) {
    detail::require_rank(t.shape(), 3, "concat_channels input");
    if (t.dim(1) != h || t.dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(t.shape()) + " vs " +
                       shape_str(inputs[0].shape()));
    }
    channels += t.dim(0);
    nodes.push_back(t.node());
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(channels) * h * w);
  for (const auto& t : inputs) out.insert(out.end(), t.values().begin(), t.values().end());
  return detail::make_result<T>({channels, h, w}, std::move(out), std::move(nodes),
                                [](Node<T>& self) {
                                  std::size_t offset = 0;
                                  for (auto& in : self.inputs) {
                                    if (in->requires_grad) {
                                      auto& g = in->grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
                                    }
                                    offset += in->value.size();
                                  }
                                },
                                "concat_channels");
}

}  // namespace gmlf
