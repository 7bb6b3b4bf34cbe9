#pragma once

#include <string>
#include <utility>
#include <vector>

#include "brace/config.hpp"
#include "brace/error.hpp"

namespace brace {

/// Additive low-rank update W + (alpha / rank) * B * A on selected weights.
struct LoraSpec {
  std::size_t rank = 8;
  std::vector<std::string> targets = {"attn.wq", "attn.wv"};
  double alpha = 8.0;

  void validate() const;

  void write(KeyValueConfig& kv) const {
    kv.set("lora.rank", std::to_string(rank));
    std::string t;
    for (std::size_t i = 0; i < targets.size(); ++i) t += (i ? "," : "") + targets[i];
    kv.set("lora.targets", t);
    kv.set("lora.alpha", std::to_string(alpha));
  }

  static LoraSpec read(const KeyValueConfig& kv) { return read(kv, LoraSpec{}); }
  static LoraSpec read(const KeyValueConfig& kv, LoraSpec base) {
    base.rank = static_cast<std::size_t>(
        kv.get_int("lora.rank", static_cast<long long>(base.rank)));
    base.alpha = kv.get_double("lora.alpha", base.alpha);
    if (auto t = kv.get("lora.targets")) {
      base.targets.clear();
      for (auto& s : detail::split(*t, ','))
        if (!detail::trim(s).empty()) base.targets.push_back(detail::trim(s));
    }
    return base;
  }
};

/// Per-layer weight names a LoRA adapter may target, with (rows, cols).
inline std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
lora_target_shapes(std::size_t d, std::size_t d_m) {
  return {{"attn.wq", {d, d}},   {"attn.wk", {d, d}},   {"attn.wv", {d, d}},
          {"attn.wo", {d, d}},   {"ffn.w_k", {d_m, d}}, {"ffn.w_v", {d, d_m}}};
}

inline std::pair<std::size_t, std::size_t> lora_target_shape(const std::string& name,
                                                              std::size_t d,
                                                              std::size_t d_m) {
  for (const auto& [n, shape] : lora_target_shapes(d, d_m))
    if (n == name) return shape;
  throw ConfigError("unknown LoRA target: " + name);
}

inline void LoraSpec::validate() const {
  if (rank < 1) throw ConfigError("LoRA rank must be >= 1");
  if (targets.empty()) throw ConfigError("LoRA needs at least one target");
  for (const auto& t : targets) lora_target_shape(t, 1, 1);
}

}  // namespace brace
