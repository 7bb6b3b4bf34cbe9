#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "brace/autodiff.hpp"
#include "brace/error.hpp"
#include "brace/model.hpp"

namespace brace {

/// Summed next-token NLL and token count over framed texts.
template <typename T>
std::pair<double, std::size_t> total_nll(const Model<T>& model, const std::vector<std::string>& texts,
                                         const std::type_identity_t<SteeringInput<T>>* steering = nullptr) {
  ad::NoGradGuard guard;
  ForwardOptions<T> fo;
  fo.steering = steering;
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& text : texts) {
    const auto ids = model.frame(text);
    const auto loss = model.lm_loss(ids, fo);
    const std::size_t n = ids.size() - 1;
    nll += static_cast<double>(loss.item()) * static_cast<double>(n);
    count += n;
  }
  return {nll, count};
}

/// Mean per-token NLL under teacher forcing.
template <typename T>
double mean_nll(const Model<T>& model, const std::vector<std::string>& texts,
                const std::type_identity_t<SteeringInput<T>>* steering = nullptr) {
  if (texts.empty()) throw Error("cannot evaluate an empty corpus");
  const auto [nll, n] = total_nll(model, texts, steering);
  return nll / static_cast<double>(n);
}

template <typename T>
double perplexity(const Model<T>& model, const std::vector<std::string>& texts,
                  const std::type_identity_t<SteeringInput<T>>* steering = nullptr) {
  return std::exp(mean_nll(model, texts, steering));
}

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

/// Distinct n-grams over total n-grams, pooled over all texts.
inline double dist_n(const std::vector<std::string>& texts, std::size_t n) {
  if (n < 1 || n > 3) throw Error("dist_n: n must be 1, 2 or 3");
  std::set<std::vector<std::string>> distinct;
  std::size_t total = 0;
  for (const auto& text : texts) {
    const auto toks = whitespace_tokens(text);
    if (toks.size() < n) continue;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      distinct.emplace(toks.begin() + static_cast<std::ptrdiff_t>(i),
                       toks.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  if (total == 0) throw Error(detail::concat("dist_n: every text is shorter than ", n, " tokens"));
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

/// log P(continuation | bos + prompt), summed over the continuation's tokens.
template <typename T>
double continuation_logprob(const Model<T>& model, const std::string& prompt,
                            const std::string& continuation,
                            const std::type_identity_t<SteeringInput<T>>* steering = nullptr) {
  ad::NoGradGuard guard;
  std::vector<int> ids{model.tokenizer().bos()};
  for (int t : model.tokenizer().encode(prompt)) ids.push_back(t);
  const std::size_t start = ids.size();
  for (int t : model.tokenizer().encode(continuation)) ids.push_back(t);
  if (ids.size() == start) throw Error("continuation encodes to no tokens");
  ForwardOptions<T> fo;
  fo.steering = steering;
  const auto trace = model.forward(std::span<const int>(ids).first(ids.size() - 1), fo);
  const auto& logits = trace.logits.value();
  double lp = 0.0;
  for (std::size_t pos = start; pos < ids.size(); ++pos) {
    const std::size_t row = pos - 1;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, double(logits(row, j)));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) sum += std::exp(double(logits(row, j)) - mx);
    lp += double(logits(row, static_cast<std::size_t>(ids[pos]))) - mx - std::log(sum);
  }
  return lp;
}

/// For each s, the prompt-averaged log of the probability mass the model puts
/// on any marker (a marker's probability is the product over its tokens).
/// Steering uses `attribute`; markers default to the attribute's own tokens.
template <typename T>
std::vector<double> marker_logprob_curve(const Model<T>& model,
                                         const std::vector<std::string>& prompts,
                                         const EncodedAttribute<T>& attribute,
                                         const std::vector<std::string>& markers,
                                         const std::vector<double>& s_grid) {
  if (prompts.empty()) throw Error("marker_logprob_curve: no prompts");
  if (markers.empty()) throw Error("marker_logprob_curve: no marker tokens");
  std::vector<double> curve;
  for (double s : s_grid) {
    const auto steer = attribute.steer(static_cast<T>(s));
    double acc = 0.0;
    for (const auto& prompt : prompts) {
      double mx = -std::numeric_limits<double>::infinity();
      std::vector<double> lps;
      for (const auto& m : markers) {
        lps.push_back(continuation_logprob(model, prompt, m, &steer));
        mx = std::max(mx, lps.back());
      }
      double sum = 0.0;
      for (double v : lps) sum += std::exp(v - mx);
      acc += mx + std::log(sum);
    }
    curve.push_back(acc / static_cast<double>(prompts.size()));
  }
  return curve;
}

/// True when every f_c output map is still zero, i.e. steering is a no-op.
template <typename T>
bool steering_untrained(const Model<T>& model) {
  for (const auto& s : model.steer_layers())
    for (T v : s.w2->value().data())
      if (v != T{0}) return false;
  for (const auto& s : model.steer_layers())
    for (T v : s.b2->value().data())
      if (v != T{0}) return false;
  return true;
}

}  // namespace brace
