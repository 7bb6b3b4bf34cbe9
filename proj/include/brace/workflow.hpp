#pragma once

// Config-driven pipelines behind brace_cli. Each subcommand is one call here,
// so tests can re-derive any tool output from the library directly.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "brace/attributes.hpp"
#include "brace/checkpoint.hpp"
#include "brace/config.hpp"
#include "brace/corpus.hpp"
#include "brace/generate.hpp"
#include "brace/metrics.hpp"
#include "brace/model.hpp"
#include "brace/steering.hpp"
#include "brace/tokenizer.hpp"
#include "brace/trainer.hpp"

namespace brace {

struct DataConfig {
  std::string corpus;       // label<TAB>text file; empty = synthetic style corpus
  std::string base_corpus;  // same format, labels ignored; empty = synthetic base corpus
  std::uint64_t seed = 12;
  std::size_t items = 1200;
  std::uint64_t base_seed = 11;
  std::size_t base_items = 2000;
  double base_marker_rate = 0.1;
  double val_fraction = 0.2;
  TokenizerMode tokenizer = TokenizerMode::character;
  std::string attributes;  // directory of *.txt lists; empty = the corpus marker lists
  std::vector<std::string> prompts;

  static DataConfig read(const KeyValueConfig& kv) {
    DataConfig d;
    d.corpus = kv.get_string("data.corpus", d.corpus);
    d.base_corpus = kv.get_string("data.base_corpus", d.base_corpus);
    d.seed = static_cast<std::uint64_t>(kv.get_int("data.seed", static_cast<long long>(d.seed)));
    d.items = static_cast<std::size_t>(kv.get_int("data.items", static_cast<long long>(d.items)));
    d.base_seed = static_cast<std::uint64_t>(
        kv.get_int("data.base_seed", static_cast<long long>(d.base_seed)));
    d.base_items = static_cast<std::size_t>(
        kv.get_int("data.base_items", static_cast<long long>(d.base_items)));
    d.base_marker_rate = kv.get_double("data.base_marker_rate", d.base_marker_rate);
    d.val_fraction = kv.get_double("data.val_fraction", d.val_fraction);
    if (auto t = kv.get("data.tokenizer")) d.tokenizer = parse_tokenizer_mode(*t);
    d.attributes = kv.get_string("data.attributes", d.attributes);
    if (auto p = kv.get("data.prompts"))
      for (auto& s : detail::split(*p, '|'))
        if (!detail::trim(s).empty()) d.prompts.push_back(detail::trim(s));
    return d;
  }
};

/// Everything a config file can set. Training sections share the TrainConfig
/// keys under their own prefix: `pretrain.*`, `train.*`, `steer.*`.
struct Experiment {
  ModelConfig model;
  BraceConfig brace;
  LoraSpec lora;
  TrainConfig pretrain;
  TrainConfig train;
  TrainConfig steer;
  DataConfig data;
  std::size_t eval_samples = 4;
  std::size_t eval_max_tokens = 24;

  Experiment() {
    pretrain.peak_lr = 3e-3;
    pretrain.max_steps = 300;
    pretrain.selector = Selector::backbone;
    train.peak_lr = 4e-2;
    train.max_steps = 500;
    steer.peak_lr = 1e-2;
    steer.max_steps = 500;
    steer.selector = Selector::brace_steering;
  }

  static Experiment read(const KeyValueConfig& kv) {
    Experiment e;
    e.model = ModelConfig::read(kv, e.model);
    e.brace = BraceConfig::read(kv, e.brace);
    e.lora = LoraSpec::read(kv, e.lora);
    e.pretrain = read_section(kv, "pretrain", e.pretrain);
    e.train = read_section(kv, "train", e.train);
    e.steer = read_section(kv, "steer", e.steer);
    e.data = DataConfig::read(kv);
    e.eval_samples = static_cast<std::size_t>(
        kv.get_int("eval.samples", static_cast<long long>(e.eval_samples)));
    e.eval_max_tokens = static_cast<std::size_t>(
        kv.get_int("eval.max_tokens", static_cast<long long>(e.eval_max_tokens)));
    return e;
  }

  static Experiment load(const std::string& path) {
    return path.empty() ? Experiment{} : read(KeyValueConfig::load(path));
  }

 private:
  static TrainConfig read_section(const KeyValueConfig& kv, const std::string& prefix,
                                  const TrainConfig& base) {
    KeyValueConfig view;
    for (const auto& [k, v] : kv.values())
      if (k.rfind(prefix + ".", 0) == 0) view.set("train." + k.substr(prefix.size() + 1), v);
    return TrainConfig::read(view, base);
  }
};

struct Corpora {
  StyleCorpus base;
  StyleCorpus train;
  StyleCorpus val;
};

inline Corpora load_corpora(const DataConfig& d) {
  Corpora c;
  c.base = d.base_corpus.empty()
               ? build_synthetic_base_corpus(d.base_seed, d.base_items, d.base_marker_rate)
               : load_corpus(d.base_corpus);
  const StyleCorpus style = d.corpus.empty() ? build_synthetic_style_corpus(d.seed, d.items)
                                             : load_corpus(d.corpus);
  std::tie(c.train, c.val) = split_corpus(style, d.val_fraction);
  return c;
}

inline std::vector<AttributeSet> attribute_sets(const DataConfig& d) {
  if (!d.attributes.empty()) return load_attribute_dir(d.attributes);
  return {{"positive", default_positive_markers()}, {"negative", default_negative_markers()}};
}

inline Tokenizer make_tokenizer(const DataConfig& d, const Corpora& c) {
  switch (d.tokenizer) {
    case TokenizerMode::byte: return Tokenizer::bytes();
    case TokenizerMode::character: return Tokenizer::chars();
    case TokenizerMode::word_list: {
      std::vector<std::vector<std::string>> lists = {c.base.texts(), c.train.texts(),
                                                     c.val.texts()};
      for (const auto& s : attribute_sets(d)) lists.push_back(s.tokens);
      return Tokenizer::words(word_vocabulary(lists));
    }
  }
  throw ConfigError("unknown tokenizer mode");
}

inline Model<float> new_model(const Experiment& e, const Corpora& c) {
  const Tokenizer tok = make_tokenizer(e.data, c);
  return Model<float>::create(with_vocab(e.model, tok), tok);
}

inline const std::vector<std::string>& default_prompts() {
  static const std::vector<std::string> v = {"the movie was", "what a",
                                             "a",             "my trip today was",
                                             "the song is",   "i found the book"};
  return v;
}

/// Prompts for next-word probes. Character-level models need the separating
/// space in the prompt; word-list models split on it.
inline std::vector<std::string> probe_prompts(const Tokenizer& tok,
                                              const std::vector<std::string>& prompts) {
  std::vector<std::string> out;
  for (const auto& p : prompts.empty() ? default_prompts() : prompts)
    out.push_back(tok.mode() == TokenizerMode::word_list ? p : p + " ");
  return out;
}

struct StageResult {
  TrainReport report;
  double val_ppl_before = 0.0;
  double val_ppl_after = 0.0;
};

/// Backbone selector: pretrain on the base corpus. Any other selector: freeze
/// the backbone, attach the selector's module if missing, fine-tune on the
/// style training split. Steering goes through run_steer_train.
inline StageResult run_train(Model<float>& m, const Experiment& e, const TrainConfig& cfg,
                             const Corpora& c, const StepCallback<float>& on_step = {}) {
  StageResult r;
  std::vector<Example> examples;
  switch (cfg.selector) {
    case Selector::backbone:
      examples = lm_examples(c.base.texts());
      break;
    case Selector::brace_steering:
      throw ConfigError("the brace+steering selector is trained with steer-train");
    case Selector::brace:
    case Selector::ablation_no_rel: {
      m.freeze_backbone();
      if (!m.has_brace()) {
        BraceConfig b = e.brace;
        b.mode = cfg.selector == Selector::brace ? BraceMode::relevance : BraceMode::ablation_no_rel;
        m.attach_brace(b);
      }
      examples = lm_examples(c.train.texts());
      break;
    }
    case Selector::lora:
      m.freeze_backbone();
      if (!m.has_lora()) m.attach_lora(e.lora);
      examples = lm_examples(c.train.texts());
      break;
  }
  r.val_ppl_before = perplexity(m, c.val.texts());
  r.report = train(m, examples, cfg, {}, on_step);
  r.val_ppl_after = perplexity(m, c.val.texts());
  return r;
}

/// Conditional training with the pair scheme. The attribute sets are stored
/// in the model so later stages can steer by name.
inline StageResult run_steer_train(Model<float>& m, const Experiment& e, const Corpora& c,
                                   const std::vector<AttributeSet>& sets,
                                   const StepCallback<float>& on_step = {}) {
  m.freeze_backbone();
  if (!m.has_brace()) m.attach_brace(e.brace);
  if (!m.has_steering()) m.attach_steering();
  StageResult r;
  r.val_ppl_before = perplexity(m, c.val.texts());
  TrainConfig cfg = e.steer;
  cfg.selector = Selector::brace_steering;
  r.report = train(m, steering_examples(pair_sampler(c.train, sets)), cfg, sets, on_step);
  m.attribute_sets() = sets;
  r.val_ppl_after = perplexity(m, c.val.texts());
  return r;
}

inline const AttributeSet& find_attribute(const Model<float>& m, const std::string& name) {
  for (const auto& s : m.attribute_sets())
    if (s.name == name) return s;
  std::string known;
  for (const auto& s : m.attribute_sets()) known += (known.empty() ? "" : ", ") + s.name;
  throw Error("unknown attribute '" + name + "' (checkpoint has: " +
              (known.empty() ? "none" : known) + ")");
}

struct EvalResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;
  double dist[3] = {0, 0, 0};  // NaN where every sample is shorter than n
  std::vector<std::string> samples;
};

/// Validation perplexity plus Dist-1/2/3 over sampled continuations of the
/// probe prompts (sample i of prompt p uses seed + p * samples + i).
inline EvalResult run_eval(const Model<float>& m, const Experiment& e, const Corpora& c,
                           const SteeringInput<float>* steer, std::uint64_t seed) {
  EvalResult r;
  const auto [nll, n] = total_nll(m, c.val.texts(), steer);
  r.tokens = n;
  r.mean_nll = nll / static_cast<double>(n);
  r.perplexity = std::exp(r.mean_nll);
  const auto prompts = probe_prompts(m.tokenizer(), e.data.prompts);
  for (std::size_t p = 0; p < prompts.size(); ++p)
    for (std::size_t i = 0; i < e.eval_samples; ++i) {
      SamplingOptions so{1.0, 0, e.eval_max_tokens, seed + p * e.eval_samples + i};
      r.samples.push_back(generate(m, prompts[p], so, steer).text);
    }
  for (std::size_t k = 0; k < 3; ++k) {
    try {
      r.dist[k] = dist_n(r.samples, k + 1);
    } catch (const Error&) {
      r.dist[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return r;
}

/// "-2..2" (step 1), "-2..2:0.5", or an explicit list "-1,0,1".
inline std::vector<double> parse_grid(const std::string& text) {
  auto num = [&](const std::string& s) { return KeyValueConfig::to_double("grid", detail::trim(s)); };
  std::vector<double> out;
  const auto dots = text.find("..");
  if (dots == std::string::npos) {
    for (const auto& part : detail::split(text, ','))
      if (!detail::trim(part).empty()) out.push_back(num(part));
  } else {
    const std::string rest = text.substr(dots + 2);
    const auto colon = rest.find(':');
    const double lo = num(text.substr(0, dots));
    const double hi = num(rest.substr(0, colon));
    const double step = colon == std::string::npos ? 1.0 : num(rest.substr(colon + 1));
    if (!(step > 0.0) || hi < lo) throw ConfigError("bad grid range: " + text);
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  }
  if (out.empty()) throw ConfigError("empty grid: " + text);
  for (double s : out)
    if (!std::isfinite(s)) throw ConfigError("grid values must be finite");
  return out;
}

/// Marker log-prob curve for steering with `attribute`, scored on the tokens
/// of `markers` (the attribute itself when empty).
inline std::vector<double> run_sweep(const Model<float>& m, const std::string& attribute,
                                     const std::string& markers, const std::vector<double>& grid,
                                     const std::vector<std::string>& prompts) {
  const auto& set = find_attribute(m, attribute);
  const auto& scored = markers.empty() ? set : find_attribute(m, markers);
  const auto enc = m.encode_attribute(set);
  return marker_logprob_curve(m, probe_prompts(m.tokenizer(), prompts), enc, scored.tokens, grid);
}

inline std::string format_sweep(const std::vector<double>& grid, const std::vector<double>& curve) {
  std::string out = "s\tmarker_logprob\n";
  char buf[64];
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%g\t%.9g\n", grid[i], curve[i]);
    out += buf;
  }
  return out;
}

inline std::string format_count(std::uint64_t n) {
  return std::to_string(n) + "\t≈" + humanize_count(n);
}

}  // namespace brace
