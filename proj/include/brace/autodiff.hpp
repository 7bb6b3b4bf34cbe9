#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Var is a handle to a graph node. Leaves are created directly from a
// Tensor; every primitive below produces an interior node that remembers its
// parents and a rule that pushes the output gradient into them. backward()
// walks the graph once in reverse topological order and then releases it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <unordered_set>
#include <vector>

#include "brace/error.hpp"
#include "brace/tensor.hpp"

namespace brace::ad {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn && parents.empty(); }

  Tensor<T>& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  /// Leaf variable.
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Accumulated gradient, or nullptr when none has been recorded.
  const Tensor<T>* grad() const {
    if (node_->grad.numel() == 0) return nullptr;
    return &node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) {
      node_->grad = Tensor<T>(node_->value.shape());
    } else {
      node_->grad = Tensor<T>();
    }
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on non-scalar of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

/// Wraps a freshly computed value as a graph node. The backward rule is only
/// attached when recording is on and some input needs a gradient.
template <typename T, typename Rule>
Var<T> make_node(Tensor<T> value, std::initializer_list<const Var<T>*> inputs,
                 Rule&& rule) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const Var<T>* in : inputs) any = any || in->requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Var<T>* in : inputs) node->parents.push_back(in->node());
      node->backward_fn = std::forward<Rule>(rule);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T, typename Rule>
Var<T> make_node_n(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   Rule&& rule) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var<T>& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward_fn = std::forward<Rule>(rule);
    }
  }
  return Var<T>(std::move(node));
}

/// Runs reverse accumulation from a scalar loss. Leaf gradients accumulate
/// (call zero_grad between steps); interior nodes are released afterwards,
/// so a second call on the same graph is an error.
template <typename T>
void backward(const Var<T>& loss) {
  if (loss.numel() != 1) {
    throw Error("backward requires a scalar loss, got shape " +
                shape_str(loss.shape()));
  }
  if (loss.node()->consumed) {
    throw Error("backward called twice on the same graph; re-run forward first");
  }
  if (!loss.requires_grad()) return;

  std::vector<std::shared_ptr<Node<T>>> order;  // owning: releases below free parents
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (node->consumed) {
      throw Error("backward reached a released graph node; re-run forward first");
    }
    if (idx < node->parents.size()) {
      std::shared_ptr<Node<T>> parent = node->parents[idx++];
      if (parent->requires_grad && !visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.emplace_back(std::move(parent), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->backward_fn) {
      node->grad_buffer();
      node->backward_fn(*node);
      node->backward_fn = nullptr;
      node->parents.clear();
      node->grad = Tensor<T>();
      node->consumed = true;
    }
  }
}

namespace detail {

struct BroadcastPlan {
  std::size_t rows, cols;
  std::size_t a_rows, a_cols, b_rows, b_cols;
};

template <typename T>
BroadcastPlan plan_broadcast(const char* op, const Tensor<T>& a,
                             const Tensor<T>& b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(brace::detail::concat(op, ": shape mismatch ",
                                           shape_str(a.shape()), " vs ",
                                           shape_str(b.shape())));
  };
  BroadcastPlan p{};
  p.a_rows = a.rows();
  p.a_cols = a.cols();
  p.b_rows = b.rows();
  p.b_cols = b.cols();
  p.rows = dim(p.a_rows, p.b_rows);
  p.cols = dim(p.a_cols, p.b_cols);
  return p;
}

inline std::size_t bidx(std::size_t i, std::size_t j, std::size_t r,
                        std::size_t c) {
  return (r == 1 ? 0 : i) * c + (c == 1 ? 0 : j);
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() > 2) {
    throw ShapeError(brace::detail::concat(op, ": expected rank <= 2, got ",
                                           shape_str(t.shape())));
  }
}

// Adds `g` (full output shape) into `dst`, summing over broadcast dims.
template <typename T, typename F>
void reduce_into(Tensor<T>& dst, std::size_t dr, std::size_t dc,
                 const BroadcastPlan& p, F&& value_at) {
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j)
      dst[bidx(i, j, dr, dc)] += value_at(i, j);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = brace::matmul(a.value(), b.value());
  return make_node(std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const std::size_t m = pa.value.rows(), k = pa.value.cols(),
                      n = pb.value.cols();
    if (pa.requires_grad)  // dA = dC * B^T
      kernels::gemm(self.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr(), m,
                    n, k, false, true, true);
    if (pb.requires_grad)  // dB = A^T * dC
      kernels::gemm(pa.value.ptr(), self.grad.ptr(), pb.grad_buffer().ptr(), k,
                    m, n, true, false, true);
  });
}

/// a * b^T without materializing the transpose.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = brace::matmul(a.value(), b.value(), false, true);
  return make_node(std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const std::size_t m = pa.value.rows(), k = pa.value.cols(),
                      n = pb.value.rows();
    if (pa.requires_grad)  // dA = dC * B
      kernels::gemm(self.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr(), m,
                    n, k, false, false, true);
    if (pb.requires_grad)  // dB = dC^T * A
      kernels::gemm(self.grad.ptr(), pa.value.ptr(), pb.grad_buffer().ptr(), n,
                    m, k, true, false, true);
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return make_node(brace::transpose(a.value()), {&a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& g = pa.grad_buffer();
    const std::size_t r = pa.value.rows(), c = pa.value.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic with 2-D broadcasting (a dim of size 1 stretches).

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_rank2("add", a.value());
  detail::require_rank2("add", b.value());
  const auto p = detail::plan_broadcast("add", a.value(), b.value());
  Tensor<T> out({p.rows, p.cols});
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.numel() == bv.numel() && p.rows == p.a_rows && p.cols == p.a_cols) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  } else {
    for (std::size_t i = 0; i < p.rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j)
        out(i, j) = av[detail::bidx(i, j, p.a_rows, p.a_cols)] +
                    bv[detail::bidx(i, j, p.b_rows, p.b_cols)];
  }
  return make_node(std::move(out), {&a, &b}, [p](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      auto& par = *self.parents[side];
      if (!par.requires_grad) continue;
      auto& g = par.grad_buffer();
      const std::size_t r = side == 0 ? p.a_rows : p.b_rows;
      const std::size_t c = side == 0 ? p.a_cols : p.b_cols;
      if (r == p.rows && c == p.cols) {
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
      } else {
        detail::reduce_into(g, r, c, p, [&](std::size_t i, std::size_t j) {
          return self.grad[i * p.cols + j];
        });
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_node(std::move(out), {&a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, scale(b, T{-1}));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank2("mul", a.value());
  detail::require_rank2("mul", b.value());
  const auto p = detail::plan_broadcast("mul", a.value(), b.value());
  Tensor<T> out({p.rows, p.cols});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j)
      out(i, j) = av[detail::bidx(i, j, p.a_rows, p.a_cols)] *
                  bv[detail::bidx(i, j, p.b_rows, p.b_cols)];
  return make_node(std::move(out), {&a, &b}, [p](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      detail::reduce_into(self.parents[0]->grad_buffer(), p.a_rows, p.a_cols, p,
                          [&](std::size_t i, std::size_t j) {
                            return self.grad[i * p.cols + j] *
                                   bv[detail::bidx(i, j, p.b_rows, p.b_cols)];
                          });
    }
    if (self.parents[1]->requires_grad) {
      detail::reduce_into(self.parents[1]->grad_buffer(), p.b_rows, p.b_cols, p,
                          [&](std::size_t i, std::size_t j) {
                            return self.grad[i * p.cols + j] *
                                   av[detail::bidx(i, j, p.a_rows, p.a_cols)];
                          });
    }
  });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
inline T gelu_scalar(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
inline T relu_scalar(T x) {
  return x > T{0} ? x : T{0};
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = relu_scalar(v);
  return make_node(std::move(out), {&a}, [](Node<T>& self) {
    auto& par = *self.parents[0];
    auto& g = par.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (par.value[i] > T{0}) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = gelu_scalar(v);
  return make_node(std::move(out), {&a}, [](Node<T>& self) {
    auto& par = *self.parents[0];
    auto& g = par.grad_buffer();
    const T inv_sqrt_2pi = T{1} / std::sqrt(T{2} * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T x = par.value[i];
      const T cdf = T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = sigmoid_scalar(v);
  return make_node(std::move(out), {&a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T{1} - y);
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

template <typename T>
Var<T> softmax(const Var<T>& a) {
  detail::require_rank2("softmax", a.value());
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0 || a.numel() == 0) throw ShapeError("softmax over an empty axis");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row_span(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return make_node(std::move(out), {&a}, [r, c](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < c; ++j)
        dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

/// Normalizes each row to zero mean and unit variance (no affine part).
template <typename T>
Var<T> layer_norm(const Var<T>& a, T eps = T{1e-5}) {
  detail::require_rank2("layer_norm", a.value());
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0 || a.numel() == 0) throw ShapeError("layer_norm over an empty axis");
  Tensor<T> out = a.value();
  std::vector<T> rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row_span(i);
    T mean{0};
    for (T v : row) mean += v;
    mean /= static_cast<T>(c);
    T var{0};
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(c);
    rstd[i] = T{1} / std::sqrt(var + eps);
    for (auto& v : row) v = (v - mean) * rstd[i];
  }
  return make_node(std::move(out), {&a},
                   [r, c, rstd = std::move(rstd)](Node<T>& self) {
                     auto& g = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < r; ++i) {
                       T mg{0}, mgx{0};
                       for (std::size_t j = 0; j < c; ++j) {
                         mg += self.grad[i * c + j];
                         mgx += self.grad[i * c + j] * self.value[i * c + j];
                       }
                       mg /= static_cast<T>(c);
                       mgx /= static_cast<T>(c);
                       for (std::size_t j = 0; j < c; ++j)
                         g[i * c + j] += rstd[i] * (self.grad[i * c + j] - mg -
                                                    self.value[i * c + j] * mgx);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Reductions

/// Mean over axis 0 (-> 1 x cols) or axis 1 (-> rows x 1).
template <typename T>
Var<T> mean(const Var<T>& a, int axis) {
  detail::require_rank2("mean", a.value());
  const std::size_t r = a.rows(), c = a.cols();
  if ((axis == 0 && r == 0) || (axis == 1 && c == 0))
    throw ShapeError("mean over an empty axis");
  if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1");
  Tensor<T> out = axis == 0 ? Tensor<T>({1, c}) : Tensor<T>({r, 1});
  const auto& v = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += v[i * c + j];
  const T n = static_cast<T>(axis == 0 ? r : c);
  for (auto& x : out.data()) x /= n;
  return make_node(std::move(out), {&a}, [r, c, axis, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[axis == 0 ? j : i] / n;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (T v : a.value().data()) acc += v;
  return make_node(Tensor<T>::scalar(acc), {&a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (auto& x : g.data()) x += up;
  });
}

/// Mean negative log-likelihood of integer targets under row-wise softmax.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets) {
  detail::require_rank2("cross_entropy", logits.value());
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) {
    throw ShapeError(brace::detail::concat(
        "cross_entropy: logits ", shape_str(logits.shape()), " vs targets (",
        targets.size(), ")"));
  }
  if (r == 0 || c == 0) throw ShapeError("cross_entropy over an empty axis");
  Tensor<T> probs = logits.value();
  T total{0};
  for (std::size_t i = 0; i < r; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw ShapeError(brace::detail::concat("cross_entropy: target ", t,
                                             " out of range at row ", i));
    }
    auto row = probs.row_span(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T s{0};
    for (auto& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    const T log_z = mx + std::log(s);
    total += log_z - logits.value()(i, static_cast<std::size_t>(t));
    for (auto& v : row) v /= s;
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_node(
      Tensor<T>::scalar(total / static_cast<T>(r)), {&logits},
      [r, c, probs = std::move(probs), tgt = std::move(tgt)](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T up = self.grad[0] / static_cast<T>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += up * probs(i, j);
          g[i * c + static_cast<std::size_t>(tgt[i])] -= up;
        }
      });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  std::size_t rows = parts[0].rows(), cols = parts[0].cols();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const bool ok = axis == 0 ? parts[k].cols() == cols : parts[k].rows() == rows;
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(parts[k].shape()));
    }
    if (axis == 0) rows += parts[k].rows();
    else cols += parts[k].cols();
  }
  Tensor<T> out({rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) out(off + i, j) = v(i, j);
        else out(i, off + j) = v(i, j);
      }
    off += axis == 0 ? v.rows() : v.cols();
  }
  return make_node_n(std::move(out), parts,
                     [axis, cols, offsets = std::move(offsets)](Node<T>& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto& par = *self.parents[k];
                         if (!par.requires_grad) continue;
                         auto& g = par.grad_buffer();
                         const std::size_t pr = par.value.rows(),
                                           pc = par.value.cols();
                         for (std::size_t i = 0; i < pr; ++i)
                           for (std::size_t j = 0; j < pc; ++j) {
                             const std::size_t oi = axis == 0 ? offsets[k] + i : i;
                             const std::size_t oj = axis == 0 ? j : offsets[k] + j;
                             g[i * pc + j] += self.grad[oi * cols + oj];
                           }
                       }
                     });
}

/// Half-open range [begin, end) along axis 0 (rows) or 1 (columns).
template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t r = a.rows(), c = a.cols();
  const std::size_t extent = axis == 0 ? r : c;
  if ((axis != 0 && axis != 1) || begin > end || end > extent) {
    throw ShapeError(brace::detail::concat("slice [", begin, ", ", end,
                                           ") out of range for ",
                                           shape_str(a.shape()), " axis ", axis));
  }
  const std::size_t orows = axis == 0 ? end - begin : r;
  const std::size_t ocols = axis == 0 ? c : end - begin;
  Tensor<T> out({orows, ocols});
  const auto& v = a.value();
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j)
      out(i, j) = axis == 0 ? v(begin + i, j) : v(i, begin + j);
  return make_node(std::move(out), {&a},
                   [axis, begin, c, orows, ocols](Node<T>& self) {
                     auto& g = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < orows; ++i)
                       for (std::size_t j = 0; j < ocols; ++j) {
                         const std::size_t si = axis == 0 ? begin + i : i;
                         const std::size_t sj = axis == 0 ? j : begin + j;
                         g[si * c + sj] += self.grad[i * ocols + j];
                       }
                   });
}

/// Row lookup (embedding): out[i] = table[indices[i]].
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> indices) {
  const std::size_t c = table.cols();
  Tensor<T> out({indices.size(), c});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= table.rows()) {
      throw ShapeError(brace::detail::concat("gather_rows: index ", idx,
                                             " out of range at position ", i));
    }
    auto src = table.value().row_span(static_cast<std::size_t>(idx));
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_node(std::move(out), {&table},
                   [c, idx = std::move(idx)](Node<T>& self) {
                     auto& g = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < idx.size(); ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         g[static_cast<std::size_t>(idx[i]) * c + j] +=
                             self.grad[i * c + j];
                   });
}

}  // namespace brace::ad
