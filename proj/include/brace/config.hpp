#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "brace/error.hpp"

namespace brace {

enum class Activation { relu, gelu };

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "gelu";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation: " + s);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace detail

/// Flat `key = value` text configuration. Blank lines and lines starting
/// with '#' are ignored. Keys are dotted (`model.d`, `train.peak_lr`).
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(detail::concat("config line ", lineno,
                                         ": expected key = value"));
      }
      cfg.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError("missing config key: " + key);
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    return v ? to_double(key, *v) : fallback;
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    return v ? to_int(key, *v) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "off") return false;
    throw ConfigError("config key " + key + ": expected boolean, got " + *v);
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected number, got " + v);
    }
  }

  static long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
      throw ConfigError("config key " + key + ": expected integer, got " + v);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d = 64;
  std::size_t d_m = 128;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 99;
  std::size_t max_seq = 128;
  Activation activation = Activation::gelu;
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (n_layers < 1) out.push_back("n_layers must be >= 1");
    if (d < 1) out.push_back("d must be >= 1");
    if (n_heads < 1) out.push_back("n_heads must be >= 1");
    else if (d % n_heads != 0) out.push_back("d must be divisible by n_heads");
    if (d_m < 1) out.push_back("d_m must be >= 1");
    if (vocab_size < 2) out.push_back("vocab_size must be >= 2");
    if (max_seq < 1) out.push_back("max_seq must be >= 1");
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
  }

  void write(KeyValueConfig& kv) const {
    kv.set("model.n_layers", std::to_string(n_layers));
    kv.set("model.d", std::to_string(d));
    kv.set("model.d_m", std::to_string(d_m));
    kv.set("model.n_heads", std::to_string(n_heads));
    kv.set("model.vocab_size", std::to_string(vocab_size));
    kv.set("model.max_seq", std::to_string(max_seq));
    kv.set("model.activation", to_string(activation));
    kv.set("model.seed", std::to_string(seed));
  }

  static ModelConfig read(const KeyValueConfig& kv) { return read(kv, ModelConfig{}); }
  static ModelConfig read(const KeyValueConfig& kv, ModelConfig base) {
    auto count = [&](const char* key, std::size_t fallback) {
      const long long v = kv.get_int(key, static_cast<long long>(fallback));
      if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
      return static_cast<std::size_t>(v);
    };
    base.n_layers = count("model.n_layers", base.n_layers);
    base.d = count("model.d", base.d);
    base.d_m = count("model.d_m", base.d_m);
    base.n_heads = count("model.n_heads", base.n_heads);
    base.vocab_size = count("model.vocab_size", base.vocab_size);
    base.max_seq = count("model.max_seq", base.max_seq);
    if (auto a = kv.get("model.activation")) base.activation = parse_activation(*a);
    base.seed = static_cast<std::uint64_t>(
        kv.get_int("model.seed", static_cast<long long>(base.seed)));
    return base;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class BraceMode { relevance, ablation_no_rel };

inline std::string to_string(BraceMode m) {
  return m == BraceMode::relevance ? "relevance" : "ablation_no_rel";
}

inline BraceMode parse_brace_mode(const std::string& s) {
  if (s == "relevance") return BraceMode::relevance;
  if (s == "ablation_no_rel") return BraceMode::ablation_no_rel;
  throw ConfigError("unknown brace mode: " + s);
}

struct BraceConfig {
  std::size_t rank = 8;
  double gate_init = -5.0;
  BraceMode mode = BraceMode::relevance;

  void validate(std::size_t d) const {
    if (rank < 1 || rank >= d) {
      throw ConfigError(detail::concat("brace rank must satisfy 1 <= d_r < d (d_r=",
                                       rank, ", d=", d, ")"));
    }
  }

  void write(KeyValueConfig& kv) const {
    kv.set("brace.rank", std::to_string(rank));
    std::ostringstream g;
    g.precision(17);
    g << gate_init;
    kv.set("brace.gate_init", g.str());
    kv.set("brace.mode", to_string(mode));
  }

  static BraceConfig read(const KeyValueConfig& kv) { return read(kv, BraceConfig{}); }
  static BraceConfig read(const KeyValueConfig& kv, BraceConfig base) {
    base.rank = static_cast<std::size_t>(
        kv.get_int("brace.rank", static_cast<long long>(base.rank)));
    base.gate_init = kv.get_double("brace.gate_init", base.gate_init);
    if (auto m = kv.get("brace.mode")) base.mode = parse_brace_mode(*m);
    return base;
  }
};

}  // namespace brace
