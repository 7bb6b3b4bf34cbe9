#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <cstdio>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "brace/attributes.hpp"
#include "brace/autodiff.hpp"
#include "brace/config.hpp"
#include "brace/error.hpp"
#include "brace/lora.hpp"
#include "brace/model.hpp"
#include "brace/parameter.hpp"
#include "brace/rng.hpp"
#include "brace/steering.hpp"

namespace brace {

enum class Selector { brace, brace_steering, lora, ablation_no_rel, backbone };

inline std::string to_string(Selector s) {
  switch (s) {
    case Selector::brace: return "brace";
    case Selector::brace_steering: return "brace+steering";
    case Selector::lora: return "lora";
    case Selector::ablation_no_rel: return "ablation_no_rel";
    case Selector::backbone: return "backbone";
  }
  return "?";
}

inline Selector parse_selector(const std::string& s) {
  if (s == "brace") return Selector::brace;
  if (s == "brace+steering") return Selector::brace_steering;
  if (s == "lora") return Selector::lora;
  if (s == "ablation_no_rel") return Selector::ablation_no_rel;
  if (s == "backbone") return Selector::backbone;
  throw ConfigError("unknown trainable selector: " + s);
}

struct TrainConfig {
  double peak_lr = 2e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  std::size_t max_steps = 0;  // > 0 overrides epochs
  double warmup_ratio = 0.2;
  double final_lr_fraction = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  Selector selector = Selector::brace;

  void validate() const {
    std::vector<std::string> bad;
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) bad.push_back("peak_lr must be > 0");
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) bad.push_back("warmup_ratio must be in [0, 1)");
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
      bad.push_back("final_lr_fraction must be in (0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      bad.push_back("betas must be in [0, 1)");
    if (weight_decay < 0.0) bad.push_back("weight_decay must be >= 0");
    if (!bad.empty()) {
      std::string msg = "invalid train config:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ConfigError(msg);
    }
  }

  void write(KeyValueConfig& kv) const {
    kv.set("train.peak_lr", detail::concat(peak_lr));
    kv.set("train.batch_size", std::to_string(batch_size));
    kv.set("train.epochs", std::to_string(epochs));
    kv.set("train.max_steps", std::to_string(max_steps));
    kv.set("train.warmup_ratio", detail::concat(warmup_ratio));
    kv.set("train.final_lr_fraction", detail::concat(final_lr_fraction));
    kv.set("train.beta1", detail::concat(beta1));
    kv.set("train.beta2", detail::concat(beta2));
    kv.set("train.weight_decay", detail::concat(weight_decay));
    kv.set("train.clip_norm", detail::concat(clip_norm));
    kv.set("train.seed", std::to_string(seed));
    kv.set("train.selector", to_string(selector));
  }

  static TrainConfig read(const KeyValueConfig& kv) { return read(kv, TrainConfig{}); }
  static TrainConfig read(const KeyValueConfig& kv, TrainConfig b) {
    auto sz = [&](const char* k, std::size_t f) {
      const long long v = kv.get_int(k, static_cast<long long>(f));
      if (v < 0) throw ConfigError(std::string("config key ") + k + " must be >= 0");
      return static_cast<std::size_t>(v);
    };
    b.peak_lr = kv.get_double("train.peak_lr", b.peak_lr);
    b.batch_size = sz("train.batch_size", b.batch_size);
    b.epochs = sz("train.epochs", b.epochs);
    b.max_steps = sz("train.max_steps", b.max_steps);
    b.warmup_ratio = kv.get_double("train.warmup_ratio", b.warmup_ratio);
    b.final_lr_fraction = kv.get_double("train.final_lr_fraction", b.final_lr_fraction);
    b.beta1 = kv.get_double("train.beta1", b.beta1);
    b.beta2 = kv.get_double("train.beta2", b.beta2);
    b.weight_decay = kv.get_double("train.weight_decay", b.weight_decay);
    b.clip_norm = kv.get_double("train.clip_norm", b.clip_norm);
    b.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(b.seed)));
    if (auto s = kv.get("train.selector")) b.selector = parse_selector(*s);
    return b;
  }
};

/// Linear warmup to the peak, then cosine decay to final_lr_fraction * peak.
inline double lr_at(double step, double total_steps, const TrainConfig& cfg) {
  if (!(total_steps > 0)) throw Error("lr_at: total_steps must be > 0");
  if (step < 0 || step > total_steps) {
    throw Error(detail::concat("lr_at: step ", step, " outside [0, ", total_steps, "]"));
  }
  const double peak = cfg.peak_lr;
  const double final_lr = cfg.final_lr_fraction * peak;
  const double warm = cfg.warmup_ratio * total_steps;
  if (step < warm) return peak * step / warm;
  if (step == warm) return peak;
  const double p = (step - warm) / (total_steps - warm);
  if (p >= 1.0) return final_lr;
  return final_lr + 0.5 * (peak - final_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

/// Marks exactly the selector's parameter groups trainable. Throws when the
/// model lacks the modules the selector needs.
template <typename T>
void apply_selector(Model<T>& model, Selector sel) {
  auto need_brace = [&](BraceMode mode) {
    if (!model.has_brace() || model.brace_config().mode != mode) {
      throw ConfigError("selector " + to_string(sel) + " needs Brace layers in " +
                        (mode == BraceMode::relevance ? "relevance" : "ablation_no_rel") +
                        " mode");
    }
  };
  switch (sel) {
    case Selector::brace: need_brace(BraceMode::relevance); break;
    case Selector::brace_steering:
      need_brace(BraceMode::relevance);
      if (!model.has_steering()) throw ConfigError("selector brace+steering needs steering projectors");
      break;
    case Selector::lora:
      if (!model.has_lora()) throw ConfigError("selector lora needs LoRA adapters attached");
      break;
    case Selector::ablation_no_rel: need_brace(BraceMode::ablation_no_rel); break;
    case Selector::backbone:
      if (model.has_brace() || model.has_lora()) {
        throw ConfigError("selector backbone trains a bare backbone (no Brace or LoRA attached)");
      }
      break;
  }
  for (auto& p : model.params()) {
    bool on = false;
    switch (p->group()) {
      case ParamGroup::backbone: on = sel == Selector::backbone; break;
      case ParamGroup::brace_seed:
        on = sel == Selector::brace || sel == Selector::brace_steering;
        break;
      case ParamGroup::brace_gate:
        on = sel == Selector::brace || sel == Selector::brace_steering ||
             sel == Selector::ablation_no_rel;
        break;
      case ParamGroup::brace_rel: on = sel == Selector::ablation_no_rel; break;
      case ParamGroup::steer_weight:
      case ParamGroup::steer_bias: on = sel == Selector::brace_steering; break;
      case ParamGroup::lora: on = sel == Selector::lora; break;
    }
    p->set_trainable(on);
  }
}

/// Whether AdamW's decoupled weight decay touches this parameter.
template <typename T>
bool decays(const Parameter<T>& p) {
  switch (p.group()) {
    case ParamGroup::brace_seed:
    case ParamGroup::steer_weight:
    case ParamGroup::lora: return true;
    case ParamGroup::backbone:
      return p.value().rows() > 1 && p.name().find(".ln") == std::string::npos &&
             p.name().rfind("ln_f", 0) != 0;
    default: return false;
  }
}

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value().shape());
      v_.emplace_back(p->value().shape());
    }
  }

  /// Global L2 norm of the current gradients.
  double grad_norm() const {
    double sq = 0.0;
    for (auto* p : params_)
      if (const auto* g = p->grad())
        for (T x : g->data()) sq += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sq);
  }

  /// One update at learning rate `lr`; returns the pre-clip gradient norm.
  double step(double lr) {
    ++t_;
    const double norm = grad_norm();
    const double clip =
        cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      const Tensor<T>* g = p.grad();
      if (!g) continue;
      const bool wd = cfg_.weight_decay > 0.0 && decays(p);
      auto& w = p.mutable_value();
      for (std::size_t j = 0; j < w.numel(); ++j) {
        const double gj = static_cast<double>((*g)[j]) * clip;
        double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * gj;
        double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * gj * gj;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        double upd = (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
        if (wd) upd += cfg_.weight_decay * static_cast<double>(w[j]);
        w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * upd);
      }
    }
    return norm;
  }

 private:
  std::vector<Parameter<T>*> params_;
  TrainConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

/// One training example: plain LM text, or steering text with an attribute
/// index and steering value.
struct Example {
  std::string text;
  std::optional<std::size_t> attribute;
  double s = 0.0;
};

inline std::vector<Example> lm_examples(const std::vector<std::string>& texts) {
  std::vector<Example> out;
  for (const auto& t : texts) out.push_back({t, std::nullopt, 0.0});
  return out;
}

inline std::vector<Example> steering_examples(const std::vector<SteeringPair>& pairs) {
  std::vector<Example> out;
  for (const auto& p : pairs) out.push_back({p.text, p.attribute, p.s});
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::size_t total_steps = 0;
  Selector selector = Selector::brace;

  /// Tab-separated `step lr loss` records under a header line.
  std::string to_tsv() const {
    std::string out = "step\tlr\tloss\n";
    char buf[96];
    for (const auto& r : steps) {
      std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\n", r.step, r.lr, r.loss);
      out += buf;
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write training report: " + path);
    out << to_tsv();
  }
};

inline std::size_t total_steps_for(std::size_t n_examples, const TrainConfig& cfg) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  const std::size_t per_epoch = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
  return per_epoch * cfg.epochs;
}

template <typename T>
using StepCallback = std::function<void(const StepRecord&, const Model<T>&)>;

/// Trains the selector's parameters on `examples`. Attribute indices refer to
/// `attributes`. Batches are drawn from a per-epoch shuffle seeded by cfg.seed.
template <typename T>
TrainReport train(Model<T>& model, const std::vector<Example>& examples, const TrainConfig& cfg,
                  const std::vector<AttributeSet>& attributes = {},
                  const std::type_identity_t<StepCallback<T>>& on_step = {}) {
  cfg.validate();
  apply_selector(model, cfg.selector);
  const bool steered = cfg.selector == Selector::brace_steering;
  for (const auto& ex : examples) {
    if (ex.attribute && !steered) {
      throw ConfigError("steering examples need the brace+steering selector");
    }
    if (ex.attribute && *ex.attribute >= attributes.size()) {
      throw Error(detail::concat("example attribute index ", *ex.attribute, " out of range"));
    }
    if (!std::isfinite(ex.s)) throw Error("example steering value must be finite");
  }
  TrainReport report;
  report.selector = cfg.selector;
  report.total_steps = examples.empty() ? 0 : total_steps_for(examples.size(), cfg);
  if (report.total_steps == 0) return report;

  auto trainable = model.params().trainable();
  AdamW<T> opt(trainable, cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  ForwardOptions<T> fo;
  fo.use_brace = cfg.selector != Selector::backbone;

  for (std::size_t step = 1; step <= report.total_steps; ++step) {
    for (auto* p : trainable) p->zero_grad();
    std::vector<std::size_t> batch;
    while (batch.size() < std::min(cfg.batch_size, examples.size())) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    // Attribute encodings are recorded once per step and shared by the batch.
    std::map<std::size_t, SteeringInput<T>> encoded;
    std::vector<ad::Var<T>> losses;
    for (std::size_t idx : batch) {
      const Example& ex = examples[idx];
      const auto ids = model.frame(ex.text);
      if (ex.attribute) {
        auto it = encoded.find(*ex.attribute);
        if (it == encoded.end()) {
          SteeringInput<T> in;
          in.h_c = model.encode_attribute_vars(attributes[*ex.attribute]);
          it = encoded.emplace(*ex.attribute, std::move(in)).first;
        }
        SteeringInput<T> in;
        in.h_c = it->second.h_c;
        in.s = static_cast<T>(ex.s);
        ForwardOptions<T> so = fo;
        so.steering = &in;
        losses.push_back(model.lm_loss(ids, so));
      } else {
        losses.push_back(model.lm_loss(ids, fo));
      }
    }
    ad::Var<T> loss = ad::scale(ad::sum(ad::concat(losses, 0)),
                                T{1} / static_cast<T>(losses.size()));
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw Error(detail::concat("non-finite training loss at step ", step));
    }
    ad::backward(loss);
    const double lr = lr_at(static_cast<double>(step), static_cast<double>(report.total_steps), cfg);
    const double norm = opt.step(lr);
    report.steps.push_back({step, lr, value, norm});
    if (on_step) on_step(report.steps.back(), model);
  }
  return report;
}

/// Model dimensions for closed-form parameter counting.
struct ModelShape {
  std::size_t n_layers = 32;
  std::size_t d = 4096;
  std::size_t d_m = 0;  // 0 -> 4 d
  std::size_t d_r = 16;
  std::size_t vocab_size = 0;
  std::size_t max_seq = 0;
  LoraSpec lora{};

  std::size_t ffn_dim() const { return d_m ? d_m : 4 * d; }

  /// `L=32,d=4096,r=16[,dm=11008][,lora_rank=16]`.
  static ModelShape parse(const std::string& text) {
    ModelShape s;
    s.lora.rank = 16;
    for (const auto& part : detail::split(text, ',')) {
      const auto t = detail::trim(part);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError("shape entry '" + t + "' is not key=value");
      const std::string k = detail::trim(t.substr(0, eq));
      const auto v = static_cast<std::size_t>(KeyValueConfig::to_int(k, detail::trim(t.substr(eq + 1))));
      if (k == "L") s.n_layers = v;
      else if (k == "d") s.d = v;
      else if (k == "r" || k == "d_r") s.d_r = v;
      else if (k == "dm" || k == "d_m") s.d_m = v;
      else if (k == "V") s.vocab_size = v;
      else if (k == "T" || k == "max_seq") s.max_seq = v;
      else if (k == "lora_rank") s.lora.rank = v;
      else throw ConfigError("unknown shape key: " + k);
    }
    return s;
  }

  static ModelShape of(const ModelConfig& c, std::size_t d_r, const LoraSpec& lora = {}) {
    return {c.n_layers, c.d, c.d_m, d_r, c.vocab_size, c.max_seq, lora};
  }
};

/// Exact trainable-parameter count for a selector, from shapes alone.
inline std::uint64_t count_params(const ModelShape& s, Selector sel) {
  const std::uint64_t L = s.n_layers, d = s.d, dm = s.ffn_dim();
  switch (sel) {
    case Selector::brace: return L * (s.d_r * d + 1);
    case Selector::brace_steering: return L * (s.d_r * d + 1) + L * (2 * d * d + 2 * d);
    case Selector::lora: {
      std::uint64_t per_layer = 0;
      for (const auto& t : s.lora.targets) {
        const auto [out, in] = lora_target_shape(t, s.d, s.ffn_dim());
        per_layer += s.lora.rank * (out + in);
      }
      return L * per_layer;
    }
    case Selector::ablation_no_rel: return L * (dm + 1);
    case Selector::backbone: {
      if (!s.vocab_size || !s.max_seq) throw ConfigError("backbone count needs V and max_seq");
      const std::uint64_t per_layer = 4 * d + 4 * d * d + 2 * d * dm;
      return 2 * s.vocab_size * d + s.max_seq * d + L * per_layer + 2 * d;
    }
  }
  throw ConfigError("unknown selector");
}

/// Trainable parameters actually present after applying the selector.
template <typename T>
std::uint64_t count_trainable(const Model<T>& model) {
  std::uint64_t n = 0;
  for (const auto& p : model.params())
    if (p->trainable()) n += p->value().numel();
  return n;
}

/// "2.1M"-style rendering, rounded to one decimal in the natural unit.
inline std::string humanize_count(std::uint64_t n) {
  char buf[32];
  if (n >= 1000000000ULL) std::snprintf(buf, sizeof buf, "%.1fB", n / 1e9);
  else if (n >= 1000000ULL) std::snprintf(buf, sizeof buf, "%.1fM", n / 1e6);
  else if (n >= 1000ULL) std::snprintf(buf, sizeof buf, "%.1fK", n / 1e3);
  else std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(n));
  return buf;
}

}  // namespace brace
