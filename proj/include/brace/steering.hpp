#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "brace/attributes.hpp"
#include "brace/brace.hpp"
#include "brace/corpus.hpp"
#include "brace/error.hpp"
#include "brace/model.hpp"
#include "brace/tensor.hpp"

namespace brace {

/// r' = r + s r_c.
template <typename T>
Tensor<T> apply_steering(const Tensor<T>& r, const Tensor<T>& r_c, T s) {
  if (r.numel() != r_c.numel()) {
    throw ShapeError("apply_steering: length mismatch " + shape_str(r.shape()) + " vs " +
                     shape_str(r_c.shape()));
  }
  Tensor<T> out = r;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s * r_c[i];
  return out;
}

/// Conditional relevance uses exactly the primary relevance computation.
template <typename T>
Tensor<T> conditional_relevance(const Tensor<T>& R, const Tensor<T>& w_v, const Tensor<T>& h_c) {
  return relevance_scores(R, w_v, h_c);
}

/// Conditional relevance at layer `l` of a model, through its projection cache.
template <typename T>
Tensor<T> conditional_relevance(const Model<T>& model, std::size_t l, const EncodedAttribute<T>& a) {
  if (l >= model.config().n_layers || l >= a.h_c.size()) {
    throw Error(detail::concat("conditional_relevance: layer ", l, " out of range (model has ",
                               model.config().n_layers, ", attribute has ", a.h_c.size(), ")"));
  }
  model.ensure_cache(l);
  return model.relevance_cached(l, a.h_c[l]);
}

struct SteeringSpec {
  std::optional<std::string> attribute;
  double s = 0.0;
};

/// Encoded attributes keyed by name, re-encoded when the model state moves on.
/// Returned snapshots are immutable and may be shared across threads.
template <typename T>
class AttributeCache {
 public:
  std::shared_ptr<const EncodedAttribute<T>> get(const Model<T>& model, const AttributeSet& set) {
    const auto stamp = model.params().state_version();
    std::lock_guard lock(mu_);
    auto it = entries_.find(set.name);
    if (it != entries_.end() && it->second->stamp == stamp) return it->second;
    auto enc = std::make_shared<const EncodedAttribute<T>>(model.encode_attribute(set));
    ++encodes_;
    entries_[set.name] = enc;
    return enc;
  }

  std::size_t encode_count() const {
    std::lock_guard lock(mu_);
    return encodes_;
  }

  void clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const EncodedAttribute<T>>> entries_;
  std::size_t encodes_ = 0;
};

struct SteeringPair {
  std::string text;
  std::size_t attribute = 0;  // index into the attribute list
  double s = 1.0;
  friend bool operator==(const SteeringPair&, const SteeringPair&) = default;
};

struct PairOptions {
  bool cross_pairs = true;
  // label -> opposing label; both directions are added automatically.
  std::vector<std::pair<std::string, std::string>> opposites = {{"positive", "negative"}};
};

/// Direct pairs (text, own-style attributes, +1) plus, when the opposing style
/// has data, cross pairs (text, opposing attributes, -1).
inline std::vector<SteeringPair> pair_sampler(const StyleCorpus& corpus,
                                              const std::vector<AttributeSet>& sets,
                                              const PairOptions& opt = {}) {
  auto index_of = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < sets.size(); ++i)
      if (sets[i].name == name) return i;
    return std::nullopt;
  };
  std::map<std::string, std::string> opposite;
  for (const auto& [a, b] : opt.opposites) {
    opposite[a] = b;
    opposite[b] = a;
  }
  std::vector<SteeringPair> out;
  for (const auto& item : corpus.items) {
    const auto own = index_of(item.label);
    if (!own) throw Error("no attribute set matches corpus label '" + item.label + "'");
    out.push_back({item.text, *own, 1.0});
    if (!opt.cross_pairs) continue;
    auto it = opposite.find(item.label);
    if (it == opposite.end() || corpus.count(it->second) == 0) continue;
    const auto other = index_of(it->second);
    if (!other) throw Error("no attribute set matches opposing label '" + it->second + "'");
    out.push_back({item.text, *other, -1.0});
  }
  return out;
}

/// Zero-shot format: every sentence brings its own attribute words.
struct ZeroShotPairs {
  std::vector<AttributeSet> sets;
  std::vector<SteeringPair> pairs;
};

inline ZeroShotPairs pair_sampler(const std::vector<StyleDatasetItem>& items) {
  ZeroShotPairs out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.sets.push_back({"item" + std::to_string(i), items[i].attributes});
    out.pairs.push_back({items[i].sentence, i, 1.0});
  }
  return out;
}

}  // namespace brace
