#pragma once

// Relevance-scored modulation of feed-forward sub-updates.
//
// For FFN input h, key matrix W_K (d_m x d) and value matrix W_V (d x d_m):
//   w   = act(W_K h)                               sub-update coefficients
//   r   = (R W_V)^T (R h) / sqrt(d_r)              relevance, R has orthonormal rows
//   out = W_V (w + sigmoid(g) * r)                 augmented FFN output
//
// The functions here operate on plain tensors and serve as the reference
// route for a single hidden state; Model runs the same algebra on whole
// sequences inside the autodiff graph.

#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <type_traits>

#include "brace/autodiff.hpp"
#include "brace/config.hpp"
#include "brace/error.hpp"
#include "brace/orthonormal.hpp"
#include "brace/tensor.hpp"

namespace brace {

namespace detail {

template <typename T>
Tensor<T> as_row(const Tensor<T>& v) {
  return Tensor<T>({1, v.numel()}, v.data());
}

template <typename T>
void check_ffn_shapes(const char* op, const Tensor<T>& h, const Tensor<T>& w_k,
                      const Tensor<T>& w_v) {
  const std::size_t d = h.numel();
  if (w_k.rows() < 1 || w_k.cols() != d || w_v.rows() != d ||
      w_v.cols() != w_k.rows()) {
    throw ShapeError(brace::detail::concat(
        op, ": shape mismatch h", shape_str(h.shape()), " W_K",
        shape_str(w_k.shape()), " W_V", shape_str(w_v.shape())));
  }
}

}  // namespace detail

template <typename T>
T activate(Activation act, T x) {
  return act == Activation::relu ? ad::relu_scalar(x) : ad::gelu_scalar(x);
}

/// Sub-update coefficients w_j = act(h . k_j) as a 1 x d_m row.
template <typename T>
Tensor<T> ffn_coefficients(const Tensor<T>& h, const Tensor<T>& w_k, Activation act) {
  Tensor<T> pre = matmul(detail::as_row(h), w_k, false, true);
  for (auto& v : pre.data()) v = activate(act, v);
  return pre;
}

/// W_V act(W_K h), returned as a 1 x d row.
template <typename T>
Tensor<T> ffn_plain(const Tensor<T>& h, const Tensor<T>& w_k, const Tensor<T>& w_v,
                    Activation act) {
  detail::check_ffn_shapes("ffn_plain", h, w_k, w_v);
  return matmul(ffn_coefficients(h, w_k, act), w_v, false, true);
}

/// r = (R W_V)^T (R h) / sqrt(d_r), returned as a 1 x d_m row.
template <typename T>
Tensor<T> relevance_scores(const Tensor<T>& r, const Tensor<T>& w_v, const Tensor<T>& h) {
  const std::size_t d = w_v.rows();
  if (r.rows() >= d) {
    throw ConfigError(brace::detail::concat(
        "relevance rank d_r=", r.rows(), " must be smaller than d=", d));
  }
  if (r.cols() != d || h.numel() != d) {
    throw ShapeError(brace::detail::concat(
        "relevance_scores: shape mismatch R", shape_str(r.shape()), " W_V",
        shape_str(w_v.shape()), " h", shape_str(h.shape())));
  }
  const Tensor<T> proj = matmul(r, w_v);  // d_r x d_m
  Tensor<T> rh = matmul(detail::as_row(h), r, false, true);  // 1 x d_r
  Tensor<T> out = matmul(rh, proj);
  const T inv = T{1} / std::sqrt(static_cast<T>(r.rows()));
  for (auto& v : out.data()) v *= inv;
  return out;
}

/// Same as relevance_scores, with R W_V supplied precomputed.
template <typename T>
Tensor<T> relevance_from_projection(const Tensor<T>& r, const Tensor<T>& proj,
                                    const Tensor<T>& h) {
  Tensor<T> rh = matmul(detail::as_row(h), r, false, true);
  Tensor<T> out = matmul(rh, proj);
  const T inv = T{1} / std::sqrt(static_cast<T>(r.rows()));
  for (auto& v : out.data()) v *= inv;
  return out;
}

template <typename T>
T gate(T gate_raw) {
  return ad::sigmoid_scalar(gate_raw);
}

/// W_V (w + gate * r). When `relevance` is absent it is computed from R.
template <typename T>
Tensor<T> ffn_aug(const Tensor<T>& h, const Tensor<T>& w_k, const Tensor<T>& w_v,
                  Activation act, const Tensor<T>& r_basis, T gate_value,
                  const std::type_identity_t<std::optional<Tensor<T>>>& relevance = std::nullopt) {
  detail::check_ffn_shapes("ffn_aug", h, w_k, w_v);
  Tensor<T> coef = ffn_coefficients(h, w_k, act);
  const Tensor<T> rel = relevance ? *relevance : relevance_scores(r_basis, w_v, h);
  if (rel.numel() != coef.numel()) {
    throw ShapeError(brace::detail::concat("ffn_aug: relevance length ", rel.numel(),
                                           " vs d_m=", coef.numel()));
  }
  for (std::size_t j = 0; j < coef.numel(); ++j) coef[j] += gate_value * rel[j];
  return matmul(coef, w_v, false, true);
}

/// Caches R = orthonormalize(seed) and R W_V for inference, keyed by a stamp
/// derived from the versions of everything the projection depends on.
template <typename T>
class ProjectionCache {
 public:
  bool valid_for(std::uint64_t stamp) const {
    std::lock_guard lock(mu_);
    return valid_ && stamp_ == stamp;
  }

  /// Recomputes unconditionally.
  void refresh(std::uint64_t stamp, const Tensor<T>& seed, const Tensor<T>& w_v) {
    std::lock_guard lock(mu_);
    recompute(stamp, seed, w_v);
  }

  /// Recomputes only when the stamp changed.
  void ensure(std::uint64_t stamp, const Tensor<T>& seed, const Tensor<T>& w_v) {
    std::lock_guard lock(mu_);
    if (!valid_ || stamp_ != stamp) recompute(stamp, seed, w_v);
  }

  void invalidate() {
    std::lock_guard lock(mu_);
    valid_ = false;
  }

  const Tensor<T>& basis(std::uint64_t stamp) const {
    BRACE_ASSERT(valid_ && stamp_ == stamp, "stale projection cache");
    return basis_;
  }
  const Tensor<T>& projection(std::uint64_t stamp) const {
    BRACE_ASSERT(valid_ && stamp_ == stamp, "stale projection cache");
    return projection_;
  }

  std::size_t recompute_count() const {
    std::lock_guard lock(mu_);
    return recomputes_;
  }

 private:
  void recompute(std::uint64_t stamp, const Tensor<T>& seed, const Tensor<T>& w_v) {
    basis_ = orthonormalize_rows(seed);
    projection_ = matmul(basis_, w_v);
    stamp_ = stamp;
    valid_ = true;
    ++recomputes_;
  }

  mutable std::mutex mu_;
  Tensor<T> basis_;
  Tensor<T> projection_;
  std::uint64_t stamp_ = 0;
  bool valid_ = false;
  std::size_t recomputes_ = 0;
};

}  // namespace brace
