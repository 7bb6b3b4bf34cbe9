#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "brace/autodiff.hpp"
#include "brace/error.hpp"
#include "brace/model.hpp"
#include "brace/rng.hpp"

namespace brace {

struct SamplingOptions {
  double temperature = 1.0;  // 0 = greedy
  std::size_t top_k = 0;     // 0 = full vocabulary
  std::size_t max_tokens = 32;
  std::uint64_t seed = 0;
};

struct Generation {
  std::string text;  // decoded continuation only
  std::vector<int> ids;
  std::vector<double> logprobs;  // log p of each emitted token under the sampling distribution
  bool stopped_at_eos = false;
};

namespace detail {

/// log-softmax of `logits / temperature` restricted to the top-k entries;
/// excluded entries get -inf.
inline std::vector<double> sampling_logprobs(std::span<const double> logits, double temperature,
                                             std::size_t top_k) {
  const std::size_t V = logits.size();
  std::vector<double> z(logits.begin(), logits.end());
  if (temperature > 0.0)
    for (auto& v : z) v /= temperature;
  if (top_k > 0 && top_k < V) {
    std::vector<std::size_t> idx(V);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Ties broken by lower index so the kept set is platform-independent.
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return z[a] > z[b]; });
    std::vector<bool> keep(V, false);
    for (std::size_t i = 0; i < top_k; ++i) keep[idx[i]] = true;
    for (std::size_t i = 0; i < V; ++i)
      if (!keep[i]) z[i] = -std::numeric_limits<double>::infinity();
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (auto& v : z) v -= lse;
  return z;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// Autoregressive decoding from bos + prompt. Stops at eos, after
/// `max_tokens`, or when the context window is full.
template <typename T>
Generation generate(const Model<T>& model, const std::string& prompt,
                    const SamplingOptions& opt, const std::type_identity_t<SteeringInput<T>>* steering = nullptr) {
  if (opt.max_tokens == 0) throw Error("max_tokens must be at least 1");
  if (!(opt.temperature >= 0.0) || !std::isfinite(opt.temperature)) {
    throw Error("temperature must be finite and non-negative");
  }
  if (steering && !std::isfinite(static_cast<double>(steering->s))) {
    throw Error("steering value must be finite");
  }
  ad::NoGradGuard guard;
  std::vector<int> ids{model.tokenizer().bos()};
  for (int t : model.tokenizer().encode(prompt)) ids.push_back(t);
  if (ids.size() >= model.config().max_seq) {
    throw Error(detail::concat("prompt encodes to ", ids.size(), " tokens; max_seq is ",
                               model.config().max_seq));
  }
  Rng rng(opt.seed);
  ForwardOptions<T> fo;
  fo.steering = steering;
  Generation g;
  std::vector<double> row(model.config().vocab_size);
  while (g.ids.size() < opt.max_tokens && ids.size() < model.config().max_seq) {
    const auto trace = model.forward(ids, fo);
    const auto& logits = trace.logits.value();
    const std::size_t last = logits.rows() - 1;
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<double>(logits(last, j));
    std::size_t next;
    std::vector<double> lp;
    if (opt.temperature == 0.0) {
      lp = detail::sampling_logprobs(row, 1.0, 0);
      next = detail::argmax(row);
    } else {
      lp = detail::sampling_logprobs(row, opt.temperature, opt.top_k);
      const double u = rng.uniform();
      double acc = 0.0;
      next = detail::argmax(lp);
      for (std::size_t j = 0; j < lp.size(); ++j) {
        if (!std::isfinite(lp[j])) continue;
        acc += std::exp(lp[j]);
        if (u < acc) {
          next = j;
          break;
        }
      }
    }
    const int id = static_cast<int>(next);
    if (id == model.tokenizer().eos()) {
      g.stopped_at_eos = true;
      break;
    }
    g.ids.push_back(id);
    g.logprobs.push_back(lp[next]);
    ids.push_back(id);
  }
  g.text = model.tokenizer().decode(g.ids);
  return g;
}

}  // namespace brace
