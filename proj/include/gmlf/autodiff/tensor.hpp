#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// Feature maps are stored channels-major (C, H, W), matrices as (rows, cols),
// both row-major. Every op that sees at least one input with requires_grad
// records its output node together with a backward rule. backward() collects
// the recorded nodes reachable from the loss and replays the rules in reverse
// recording order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gmlf {

using Shape = std::vector<int>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (int d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward_rule;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_rule; }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false) {
    check_shape(shape);
    node_ = std::make_shared<Node<T>>();
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    check_shape(shape);
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, v, requires_grad); }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Direct mutation is reserved for leaf parameters (optimizer updates,
  // finite-difference perturbation, deserialization).
  std::span<T> mutable_values() { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  const char* op_name() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  // Same values and shape, new leaf without history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }
  Tensor clone_leaf(bool requires_grad) const { return Tensor(shape(), node_->value, requires_grad); }

 private:
  NodePtr node_;
};

namespace detail {

// Builds the result of an op. The backward rule is recorded only when grad
// mode is on and some input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> rule, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  node->seq = next_sequence();
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_rule = std::move(rule);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void accumulate(Node<T>& node, std::span<const T> delta) {
  if (!node.requires_grad) return;
  auto& g = node.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

/// Ordered record of the operations reachable from a loss.
template <typename T>
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor<T>& root) {
    std::vector<Node<T>*> stack{root.node().get()};
    std::unordered_set<Node<T>*> seen{root.node().get()};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad) continue;
      entries_.push_back(n);
      for (const auto& in : n->inputs) {
        if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
      }
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Node<T>*>& entries() const { return entries_; }

  // Replays backward rules from the latest recorded op to the earliest.
  void replay() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_rule && !n->grad.empty()) n->backward_rule(*n);
    }
  }

 private:
  std::vector<Node<T>*> entries_;
};

/// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
/// Leaf gradients add up across calls; intermediate gradients are reset on
/// each call so a second backward adds exactly one more copy to the leaves.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  ComputationTape<T> tape(loss);
  for (Node<T>* n : tape.entries()) {
    if (!n->is_leaf()) n->grad.clear();
  }
  loss.node()->grad_buffer()[0] += T(1);
  tape.replay();
}

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                [](Node<T>& self) {
                                  detail::accumulate<T>(*self.inputs[0], self.grad);
                                  detail::accumulate<T>(*self.inputs[1], self.grad);
                                },
                                "add");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return detail::make_result<T>(a.shape(), std::move(out), {a.node()},
                                [factor](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                                },
                                "scale");
}

/// True when `b` can be expanded to `a`'s shape by repeating singleton axes.
inline bool broadcastable_to(const Shape& b, const Shape& a) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (b[i] != a[i] && b[i] != 1) return false;
  }
  return true;
}

namespace detail {

// Index into `b` for each linear index of `a`, under singleton expansion.
inline std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b) {
  const std::size_t rank = a.size();
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    b_stride[d] = (b[d] == 1) ? 0 : s;
    s *= static_cast<std::size_t>(b[d]);
  }
  std::vector<std::size_t> index(shape_numel(a));
  std::vector<int> counter(rank, 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    index[i] = bi;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < a[d]) {
        bi += b_stride[d];
        break;
      }
      bi -= b_stride[d] * static_cast<std::size_t>(a[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace detail

/// out[i] = a[i] * b[broadcast(i)]. `b` may carry singleton axes that expand
/// to `a`'s extent; ranks must agree. The gradient for `b` is summed over the
/// expanded axes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!broadcastable_to(b.shape(), a.shape())) {
    throw ShapeError("mul: shape mismatch, cannot broadcast " + shape_str(b.shape()) + " to " +
                     shape_str(a.shape()));
  }
  std::vector<T> out(a.numel());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                  [](Node<T>& self) {
                                    Node<T>& na = *self.inputs[0];
                                    Node<T>& nb = *self.inputs[1];
                                    if (na.requires_grad) {
                                      auto& g = na.grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
                                    }
                                    if (nb.requires_grad) {
                                      auto& g = nb.grad_buffer();
                                      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
                                    }
                                  },
                                  "mul");
  }
  auto index = detail::broadcast_index(a.shape(), b.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[index[i]];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()},
                                [index = std::move(index)](Node<T>& self) {
                                  Node<T>& na = *self.inputs[0];
                                  Node<T>& nb = *self.inputs[1];
                                  if (na.requires_grad) {
                                    auto& g = na.grad_buffer();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[index[i]];
                                  }
                                  if (nb.requires_grad) {
                                    auto& g = nb.grad_buffer();
                                    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i] * na.value[i];
                                  }
                                },
                                "mul_broadcast");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return detail::make_result<T>({1}, {total}, {a.node()},
                                [](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (auto& x : g) x += self.grad[0];
                                },
                                "sum");
}

/// sum_i a[i] * weights[i] with constant weights; used for random linear probes.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::vector<T> weights) {
  if (weights.size() != a.numel()) {
    throw ShapeError("weighted_sum: expected " + std::to_string(a.numel()) + " weights, got " +
                     std::to_string(weights.size()));
  }
  T total = T(0);
  for (std::size_t i = 0; i < weights.size(); ++i) total += a[i] * weights[i];
  return detail::make_result<T>({1}, {total}, {a.node()},
                                [w = std::move(weights)](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  auto& g = in.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
                                },
                                "weighted_sum");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()),
                                {a.node()},
                                [](Node<T>& self) { detail::accumulate<T>(*self.inputs[0], self.grad); },
                                "reshape");
}

/// Sum of several scalars (or equally shaped tensors).
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  std::vector<T> out(terms[0].numel(), T(0));
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& t : terms) {
    if (t.shape() != terms[0].shape()) {
      throw ShapeError("add_n: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(terms[0].shape()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
    inputs.push_back(t.node());
  }
  return detail::make_result<T>(terms[0].shape(), std::move(out), std::move(inputs),
                                [](Node<T>& self) {
                                  for (auto& in : self.inputs) detail::accumulate<T>(*in, self.grad);
                                },
                                "add_n");
}

/// Stacks equally shaped tensors along a new leading axis: (N, ...).
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner = items[0].shape();
  std::vector<T> out;
  out.reserve(items.size() * items[0].numel());
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(inner));
    }
    out.insert(out.end(), t.values().begin(), t.values().end());
    inputs.push_back(t.node());
  }
  Shape shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return detail::make_result<T>(std::move(shape), std::move(out), std::move(inputs),
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
                                "stack");
}

}  // namespace gmlf
