#pragma once

#include <cmath>
#include <vector>

#include "brace/rng.hpp"
#include "brace/tensor.hpp"
#include "brace/tokenizer.hpp"
#include "brace/model.hpp"

namespace testing_util {

template <typename T>
brace::Tensor<T> randn(brace::Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  brace::Tensor<T> t({r, c});
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

// Triple loop, no transposes, no skipping.
template <typename T>
brace::Tensor<T> naive_matmul(const brace::Tensor<T>& a, const brace::Tensor<T>& b) {
  brace::Tensor<T> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += (long double)a(i, k) * b(k, j);
      c(i, j) = static_cast<T>(acc);
    }
  return c;
}

template <typename T>
brace::Tensor<T> naive_transpose(const brace::Tensor<T>& a) {
  brace::Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline brace::ModelConfig tiny_config(const brace::Tokenizer& tok, std::size_t L = 2,
                                      std::size_t d = 16, std::size_t dm = 32,
                                      std::size_t heads = 2, std::uint64_t seed = 3) {
  brace::ModelConfig c;
  c.n_layers = L;
  c.d = d;
  c.d_m = dm;
  c.n_heads = heads;
  c.vocab_size = tok.vocab_size();
  c.max_seq = 64;
  c.seed = seed;
  return c;
}

template <typename T>
brace::Model<T> tiny_model(std::uint64_t seed = 3, std::size_t L = 2, std::size_t d = 16,
                           std::size_t dm = 32) {
  auto tok = brace::Tokenizer::chars();
  return brace::Model<T>::create(tiny_config(tok, L, d, dm, 2, seed), tok);
}

// Random values into every parameter of a group, bumping versions.
template <typename T>
void randomize(brace::Model<T>& m, brace::ParamGroup g, brace::Rng& rng, double sd) {
  for (auto& p : m.params())
    if (p->group() == g)
      for (auto& v : p->mutable_value().data()) v = static_cast<T>(rng.normal(0.0, sd));
}

}  // namespace testing_util
