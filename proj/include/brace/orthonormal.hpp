#pragma once

#include <cmath>
#include <type_traits>
#include <vector>

#include "brace/autodiff.hpp"
#include "brace/error.hpp"
#include "brace/tensor.hpp"

namespace brace {

/// Factorization A = L * Q with Q having orthonormal rows and L lower
/// triangular with a positive diagonal (the row form of a thin QR of A^T).
template <typename T>
struct RowOrthoFactors {
  Tensor<T> q;  // d_r x d
  Tensor<T> l;  // d_r x d_r
};

namespace detail {

template <typename T>
using OrthoAcc = std::conditional_t<(sizeof(T) < sizeof(double)), double, long double>;

}  // namespace detail

/// Gram-Schmidt with one re-orthogonalization pass per row, accumulated in
/// extended precision. Throws when a pivot falls below 1e-8 * max|A|.
template <typename T>
RowOrthoFactors<T> row_ortho_factors(const Tensor<T>& a) {
  using Acc = detail::OrthoAcc<T>;
  const std::size_t r = a.rows(), d = a.cols();
  if (r > d) {
    throw ShapeError(brace::detail::concat(
        "orthonormalize_rows: need rows <= cols, got ", shape_str(a.shape())));
  }
  const Acc tol = Acc(1e-8) * static_cast<Acc>(max_abs(a));
  std::vector<Acc> q(r * d, Acc{0});
  std::vector<Acc> l(r * r, Acc{0});
  std::vector<Acc> v(d);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<Acc>(a(i, j));
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < i; ++k) {
        Acc c{0};
        for (std::size_t j = 0; j < d; ++j) c += q[k * d + j] * v[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= c * q[k * d + j];
        l[i * r + k] += c;
      }
    }
    Acc norm{0};
    for (Acc x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > tol)) throw Error("degenerate projection seed");
    l[i * r + i] = norm;
    for (std::size_t j = 0; j < d; ++j) q[i * d + j] = v[j] / norm;
  }
  RowOrthoFactors<T> out{Tensor<T>({r, d}), Tensor<T>({r, r})};
  for (std::size_t i = 0; i < r * d; ++i) out.q[i] = static_cast<T>(q[i]);
  for (std::size_t i = 0; i < r * r; ++i) out.l[i] = static_cast<T>(l[i]);
  return out;
}

template <typename T>
Tensor<T> orthonormalize_rows(const Tensor<T>& a) {
  return row_ortho_factors(a).q;
}

/// max |R R^T - I| (infinity norm over entries).
template <typename T>
T orthonormality_error(const Tensor<T>& r) {
  const Tensor<T> g = matmul(r, r, false, true);
  T worst{0};
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      const T target = i == j ? T{1} : T{0};
      worst = std::max(worst, static_cast<T>(std::abs(g(i, j) - target)));
    }
  return worst;
}

namespace ad {

/// Differentiable orthonormalization of a projection seed.
///
/// With A = L Q, G = dLoss/dQ and B = Q G^T, the seed gradient is
///   dA = L^{-T} (G + (S - B)^T Q),  S = strict_lower(B - B^T).
template <typename T>
Var<T> orthonormalize_rows(const Var<T>& a) {
  auto factors = row_ortho_factors(a.value());
  Tensor<T> q = factors.q;
  return make_node(std::move(q), {&a}, [l = std::move(factors.l)](Node<T>& self) {
    using Acc = brace::detail::OrthoAcc<T>;
    const Tensor<T>& q = self.value;
    const Tensor<T>& g = self.grad;
    const std::size_t r = q.rows(), d = q.cols();
    std::vector<Acc> b(r * r, Acc{0});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < r; ++k) {
        Acc acc{0};
        for (std::size_t j = 0; j < d; ++j)
          acc += static_cast<Acc>(q(i, j)) * static_cast<Acc>(g(k, j));
        b[i * r + k] = acc;
      }
    // M = (S - B)^T, S strictly lower part of (B - B^T).
    std::vector<Acc> m(r * r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < r; ++k) {
        const Acc s = i > k ? b[i * r + k] - b[k * r + i] : Acc{0};
        m[k * r + i] = s - b[i * r + k];
      }
    // Y = G + M Q
    std::vector<Acc> y(r * d);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        Acc acc = static_cast<Acc>(g(i, j));
        for (std::size_t k = 0; k < r; ++k)
          acc += m[i * r + k] * static_cast<Acc>(q(k, j));
        y[i * d + j] = acc;
      }
    // Solve L^T X = Y (L^T upper triangular) by back substitution.
    for (std::size_t ii = r; ii-- > 0;) {
      for (std::size_t j = 0; j < d; ++j) {
        Acc acc = y[ii * d + j];
        for (std::size_t k = ii + 1; k < r; ++k)
          acc -= static_cast<Acc>(l(k, ii)) * y[k * d + j];
        y[ii * d + j] = acc / static_cast<Acc>(l(ii, ii));
      }
    }
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r * d; ++i) ga[i] += static_cast<T>(y[i]);
  });
}

}  // namespace ad

}  // namespace brace
