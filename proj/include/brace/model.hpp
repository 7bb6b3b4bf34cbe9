#pragma once

// Toy pre-norm decoder-only transformer with optional Brace modulation on
// every FFN, per-layer conditional projectors for steering, and LoRA
// adapters. One ParameterSet owns every weight; the component structs below
// hold non-owning pointers into it.

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brace/attributes.hpp"
#include "brace/autodiff.hpp"
#include "brace/brace.hpp"
#include "brace/config.hpp"
#include "brace/hash.hpp"
#include "brace/lora.hpp"
#include "brace/orthonormal.hpp"
#include "brace/parameter.hpp"
#include "brace/rng.hpp"
#include "brace/tensor.hpp"
#include "brace/tokenizer.hpp"

namespace brace {

template <typename T>
struct ForwardTrace {
  ad::Var<T> logits;                   // seq x V
  std::vector<ad::Var<T>> ffn_inputs;  // per layer, seq x d
};

/// Per-layer attribute representations h_c and the steering scalar s.
template <typename T>
struct SteeringInput {
  std::vector<ad::Var<T>> h_c;  // per layer, 1 x d
  T s = T{0};
  std::optional<std::uint64_t> stamp;  // model state the h_c were computed for
};

template <typename T>
struct ForwardOptions {
  bool use_brace = true;
  const SteeringInput<T>* steering = nullptr;
};

/// Inference-time snapshot of an encoded attribute set.
template <typename T>
struct EncodedAttribute {
  std::string name;
  std::uint64_t stamp = 0;
  std::vector<Tensor<T>> h_c;

  SteeringInput<T> steer(T s) const {
    SteeringInput<T> in;
    for (const auto& h : h_c) in.h_c.push_back(ad::constant(h));
    in.s = s;
    in.stamp = stamp;
    return in;
  }
};

template <typename T>
class Model {
 public:
  struct Block {
    Parameter<T>* ln1_g;
    Parameter<T>* ln1_b;
    Parameter<T>* wq;
    Parameter<T>* wk;
    Parameter<T>* wv;
    Parameter<T>* wo;
    Parameter<T>* ln2_g;
    Parameter<T>* ln2_b;
    Parameter<T>* ffn_k;  // d_m x d, rows are keys k_j
    Parameter<T>* ffn_v;  // d x d_m, columns are values v_j
  };

  struct BraceLayer {
    Parameter<T>* seed = nullptr;  // d_r x d, unconstrained
    Parameter<T>* gate = nullptr;  // 1 x 1, raw (pre-sigmoid)
    Parameter<T>* rel = nullptr;   // 1 x d_m, ablation mode only
    std::unique_ptr<ProjectionCache<T>> cache = std::make_unique<ProjectionCache<T>>();
  };

  // f_c(x) = W2 act(W1 x + b1) + b2 with W2, b2 zero at init.
  struct SteerLayer {
    Parameter<T>* w1;
    Parameter<T>* b1;
    Parameter<T>* w2;
    Parameter<T>* b2;
  };

  struct LoraPair {
    Parameter<T>* a;  // rank x in
    Parameter<T>* b;  // out x rank, zero at init
  };

  static Model create(const ModelConfig& config, Tokenizer tokenizer) {
    config.validate();
    if (tokenizer.vocab_size() != config.vocab_size) {
      throw ConfigError(brace::detail::concat("model vocab_size ", config.vocab_size,
                                              " does not match tokenizer vocabulary ",
                                              tokenizer.vocab_size()));
    }
    Model m(config, std::move(tokenizer));
    m.init_backbone();
    return m;
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  bool has_brace() const { return brace_.has_value(); }
  const BraceConfig& brace_config() const {
    if (!brace_) throw Error("model has no Brace layers attached");
    return *brace_;
  }
  const std::vector<BraceLayer>& brace_layers() const { return brace_layers_; }
  bool has_steering() const { return !steer_layers_.empty(); }
  const std::vector<SteerLayer>& steer_layers() const { return steer_layers_; }
  bool has_lora() const { return lora_.has_value(); }
  const LoraSpec& lora_spec() const {
    if (!lora_) throw Error("model has no LoRA adapters attached");
    return *lora_;
  }

  /// Attribute sets travel with the checkpoint when steering is attached.
  std::vector<AttributeSet>& attribute_sets() { return attribute_sets_; }
  const std::vector<AttributeSet>& attribute_sets() const { return attribute_sets_; }

  void attach_brace(const BraceConfig& cfg, std::optional<std::uint64_t> seed = {}) {
    if (brace_) throw Error("Brace layers already attached");
    cfg.validate(config_.d);
    brace_ = cfg;
    Rng rng(seed.value_or(config_.seed * 0x9E3779B97F4A7C15ULL + 1));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(config_.d));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = layer_prefix(l) + "brace.";
      BraceLayer layer;
      if (cfg.mode == BraceMode::relevance) {
        layer.seed = &params_.add(p + "seed", normal({cfg.rank, config_.d}, stddev, rng),
                                  ParamGroup::brace_seed);
      } else {
        layer.rel = &params_.add(p + "rel", Tensor<T>({1, config_.d_m}), ParamGroup::brace_rel);
      }
      layer.gate = &params_.add(p + "gate", Tensor<T>::scalar(static_cast<T>(cfg.gate_init)),
                                ParamGroup::brace_gate);
      brace_layers_.push_back(std::move(layer));
    }
  }

  void attach_steering(std::optional<std::uint64_t> seed = {}) {
    if (!brace_ || brace_->mode != BraceMode::relevance) {
      throw Error("steering requires Brace layers in relevance mode");
    }
    if (has_steering()) throw Error("steering projectors already attached");
    Rng rng(seed.value_or(config_.seed * 0x9E3779B97F4A7C15ULL + 2));
    const std::size_t d = config_.d;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = layer_prefix(l) + "steer.";
      SteerLayer s{};
      s.w1 = &params_.add(p + "w1", normal({d, d}, stddev, rng), ParamGroup::steer_weight);
      s.b1 = &params_.add(p + "b1", Tensor<T>({1, d}), ParamGroup::steer_bias);
      s.w2 = &params_.add(p + "w2", Tensor<T>({d, d}), ParamGroup::steer_weight);
      s.b2 = &params_.add(p + "b2", Tensor<T>({1, d}), ParamGroup::steer_bias);
      steer_layers_.push_back(s);
    }
  }

  void attach_lora(const LoraSpec& spec, std::optional<std::uint64_t> seed = {}) {
    if (lora_) throw Error("LoRA adapters already attached");
    spec.validate();
    lora_ = spec;
    Rng rng(seed.value_or(config_.seed * 0x9E3779B97F4A7C15ULL + 3));
    lora_layers_.resize(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      for (const auto& target : spec.targets) {
        const auto [out, in] = lora_target_shape(target, config_.d, config_.d_m);
        const std::string p = layer_prefix(l) + target + ".lora_";
        LoraPair pair{};
        pair.a = &params_.add(p + "a",
                              normal({spec.rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                              ParamGroup::lora);
        pair.b = &params_.add(p + "b", Tensor<T>({out, spec.rank}), ParamGroup::lora);
        lora_layers_[l].emplace_back(target, pair);
      }
    }
  }

  void freeze_backbone() {
    for (auto& p : params_)
      if (p->group() == ParamGroup::backbone) p->set_trainable(false);
  }

  /// Hash over backbone parameter names and values.
  std::uint64_t backbone_checksum() const {
    Fnv1a64 h;
    for (const auto& p : params_) {
      if (p->group() != ParamGroup::backbone) continue;
      h.update(p->name());
      h.update(p->value().ptr(), p->value().numel() * sizeof(T));
    }
    return h.digest();
  }

  /// bos + text tokens + eos.
  std::vector<int> frame(const std::string& text) const {
    std::vector<int> ids{tokenizer_.bos()};
    auto body = tokenizer_.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(tokenizer_.eos());
    return ids;
  }

  ForwardTrace<T> forward(std::span<const int> tokens, const ForwardOptions<T>& opts = {}) const {
    const std::size_t n = tokens.size();
    if (n < 1 || n > config_.max_seq) {
      throw Error(brace::detail::concat("sequence length ", n, " outside [1, ",
                                        config_.max_seq, "]"));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size) {
        throw Error(brace::detail::concat("token id ", tokens[i],
                                          " out of vocabulary at position ", i));
      }
    }
    const SteeringInput<T>* steering = opts.steering;
    if (steering) {
      if (!opts.use_brace || !brace_ || brace_->mode != BraceMode::relevance) {
        throw Error("steering requires Brace layers in relevance mode");
      }
      if (steering->h_c.size() != config_.n_layers) {
        throw Error(brace::detail::concat("steering input has ", steering->h_c.size(),
                                          " layers, model has ", config_.n_layers));
      }
      BRACE_ASSERT(!steering->stamp || *steering->stamp == params_.state_version(),
                   "stale attribute encoding");
    }

    const std::size_t d = config_.d;
    const std::size_t heads = config_.n_heads;
    const std::size_t dh = d / heads;
    ForwardTrace<T> trace;

    ad::Var<T> x = ad::add(ad::gather_rows(tok_emb_->var(), tokens),
                           ad::slice(pos_emb_->var(), 0, 0, n));
    const ad::Var<T> mask = ad::constant(causal_mask(n));
    const T attn_scale = T{1} / std::sqrt(static_cast<T>(dh));

    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const Block& b = blocks_[l];
      // Attention sublayer.
      ad::Var<T> a = affine_norm(x, *b.ln1_g, *b.ln1_b);
      ad::Var<T> q = ad::matmul_nt(a, weight(l, "attn.wq", *b.wq));
      ad::Var<T> k = ad::matmul_nt(a, weight(l, "attn.wk", *b.wk));
      ad::Var<T> v = ad::matmul_nt(a, weight(l, "attn.wv", *b.wv));
      std::vector<ad::Var<T>> head_out;
      head_out.reserve(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        ad::Var<T> qh = heads == 1 ? q : ad::slice(q, 1, h * dh, (h + 1) * dh);
        ad::Var<T> kh = heads == 1 ? k : ad::slice(k, 1, h * dh, (h + 1) * dh);
        ad::Var<T> vh = heads == 1 ? v : ad::slice(v, 1, h * dh, (h + 1) * dh);
        ad::Var<T> scores = ad::add(ad::scale(ad::matmul_nt(qh, kh), attn_scale), mask);
        head_out.push_back(ad::matmul(ad::softmax(scores), vh));
      }
      ad::Var<T> attn = heads == 1 ? head_out[0] : ad::concat(head_out, 1);
      x = ad::add(x, ad::matmul_nt(attn, weight(l, "attn.wo", *b.wo)));

      // FFN sublayer; `h` is the hidden state the FFN (and Brace) consumes.
      ad::Var<T> h = affine_norm(x, *b.ln2_g, *b.ln2_b);
      trace.ffn_inputs.push_back(h);
      const ad::Var<T> w_k = weight(l, "ffn.w_k", *b.ffn_k);
      const ad::Var<T> w_v = weight(l, "ffn.w_v", *b.ffn_v);
      ad::Var<T> coef = activation(ad::matmul_nt(h, w_k));
      if (brace_ && opts.use_brace) {
        coef = ad::add(coef, gated_relevance(l, h, w_v, steering));
      }
      x = ad::add(x, ad::matmul_nt(coef, w_v));
    }
    ad::Var<T> out = affine_norm(x, *lnf_g_, *lnf_b_);
    trace.logits = ad::matmul_nt(out, lm_head_->var());
    return trace;
  }

  /// Mean next-token negative log-likelihood of a framed sequence.
  ad::Var<T> lm_loss(std::span<const int> framed, const ForwardOptions<T>& opts = {}) const {
    if (framed.size() < 2) throw Error("lm_loss needs at least two tokens");
    auto trace = forward(framed.first(framed.size() - 1), opts);
    return ad::cross_entropy(trace.logits, framed.subspan(1));
  }

  /// Token ids fed to the model when encoding an attribute set (bos first).
  std::vector<int> attribute_tokens(const AttributeSet& set, bool truncate = false) const {
    if (set.tokens.empty()) throw Error("attribute set '" + set.name + "' has no tokens");
    std::vector<int> ids{tokenizer_.bos()};
    auto body = tokenizer_.encode(set.joined());
    ids.insert(ids.end(), body.begin(), body.end());
    if (ids.size() > config_.max_seq) {
      if (!truncate) {
        throw Error(brace::detail::concat(
            "attribute set '", set.name, "' encodes to ", ids.size(),
            " tokens, exceeding max_seq=", config_.max_seq,
            "; shorten the list or enable truncation explicitly"));
      }
      ids.resize(config_.max_seq);
    }
    return ids;
  }

  /// h_c per layer: f_c applied to the mean FFN input over attribute tokens.
  /// Records into the graph when gradients are enabled.
  std::vector<ad::Var<T>> encode_attribute_vars(const AttributeSet& set,
                                                bool truncate = false) const {
    if (!has_steering()) throw Error("model has no steering projectors attached");
    const auto ids = attribute_tokens(set, truncate);
    auto trace = forward(ids);
    std::vector<ad::Var<T>> out;
    const std::size_t n = ids.size();
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      ad::Var<T> states = n > 1 ? ad::slice(trace.ffn_inputs[l], 0, 1, n) : trace.ffn_inputs[l];
      out.push_back(project_attribute(l, ad::mean(states, 0)));
    }
    return out;
  }

  EncodedAttribute<T> encode_attribute(const AttributeSet& set, bool truncate = false) const {
    ad::NoGradGuard guard;
    EncodedAttribute<T> enc;
    enc.name = set.name;
    enc.stamp = params_.state_version();
    for (auto& v : encode_attribute_vars(set, truncate)) enc.h_c.push_back(v.value());
    return enc;
  }

  /// f_c at layer l on a 1 x d row.
  ad::Var<T> project_attribute(std::size_t l, const ad::Var<T>& pooled) const {
    const SteerLayer& s = steer_layers_.at(l);
    ad::Var<T> hidden = activation(ad::add(ad::matmul_nt(pooled, s.w1->var()), s.b1->var()));
    return ad::add(ad::matmul_nt(hidden, s.w2->var()), s.b2->var());
  }

  /// Relevance used in ablation mode: the learned vector, whatever h is.
  Tensor<T> ablation_relevance(std::size_t l, const Tensor<T>& h) const {
    if (!brace_ || brace_->mode != BraceMode::ablation_no_rel) {
      throw Error("ablation relevance requested but Brace is not in ablation_no_rel mode");
    }
    if (h.cols() != config_.d) {
      throw ShapeError(brace::detail::concat("ablation_relevance: h", shape_str(h.shape()),
                                             " vs d=", config_.d));
    }
    return brace_layers_.at(l).rel->value();
  }

  /// Current orthonormal basis R at layer l.
  Tensor<T> basis(std::size_t l) const {
    return orthonormalize_rows(brace_layers_.at(l).seed->value());
  }

  /// W + (alpha / rank) B A when a LoRA adapter targets the weight.
  Tensor<T> effective_weight(std::size_t l, const std::string& name) const {
    ad::NoGradGuard guard;
    return weight(l, name, base_weight(l, name)).value();
  }

  std::uint64_t projection_stamp(std::size_t l) const {
    std::uint64_t s = brace_layers_.at(l).seed->version() + blocks_[l].ffn_v->version();
    if (const LoraPair* p = lora_for(l, "ffn.w_v")) s += p->a->version() + p->b->version();
    return s;
  }

  /// Makes every projection cache current.
  void refresh_caches() const {
    if (!brace_ || brace_->mode != BraceMode::relevance) return;
    for (std::size_t l = 0; l < config_.n_layers; ++l) ensure_cache(l);
  }

  const ProjectionCache<T>& projection_cache(std::size_t l) const {
    return *brace_layers_.at(l).cache;
  }

  /// Cache-backed relevance for plain hidden states (rows of `h`).
  Tensor<T> relevance_cached(std::size_t l, const Tensor<T>& h) const {
    const auto stamp = projection_stamp(l);
    const auto& cache = *brace_layers_.at(l).cache;
    return scaled_relevance(h, cache.basis(stamp), cache.projection(stamp));
  }

  void ensure_cache(std::size_t l) const {
    const BraceLayer& layer = brace_layers_.at(l);
    const auto stamp = projection_stamp(l);
    if (layer.cache->valid_for(stamp)) return;
    layer.cache->ensure(stamp, layer.seed->value(), effective_weight(l, "ffn.w_v"));
  }

  Parameter<T>& base_weight(std::size_t l, const std::string& name) const {
    const Block& b = blocks_.at(l);
    if (name == "attn.wq") return *b.wq;
    if (name == "attn.wk") return *b.wk;
    if (name == "attn.wv") return *b.wv;
    if (name == "attn.wo") return *b.wo;
    if (name == "ffn.w_k") return *b.ffn_k;
    if (name == "ffn.w_v") return *b.ffn_v;
    throw Error("unknown weight name: " + name);
  }

 private:
  Model(ModelConfig config, Tokenizer tokenizer)
      : config_(std::move(config)), tokenizer_(std::move(tokenizer)) {}

  static std::string layer_prefix(std::size_t l) {
    return "layers." + std::to_string(l) + ".";
  }

  static Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    return t;
  }

  void init_backbone() {
    Rng rng(config_.seed);
    const std::size_t d = config_.d, dm = config_.d_m, V = config_.vocab_size;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
    auto bb = [&](const std::string& name, Tensor<T> v) {
      return &params_.add(name, std::move(v), ParamGroup::backbone);
    };
    auto ones = [](std::size_t n) { return Tensor<T>({1, n}, T{1}); };
    tok_emb_ = bb("tok_emb", normal({V, d}, 0.5, rng));
    pos_emb_ = bb("pos_emb", normal({config_.max_seq, d}, 0.1, rng));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = layer_prefix(l);
      Block b{};
      b.ln1_g = bb(p + "ln1.gamma", ones(d));
      b.ln1_b = bb(p + "ln1.beta", Tensor<T>({1, d}));
      b.wq = bb(p + "attn.wq", normal({d, d}, sd, rng));
      b.wk = bb(p + "attn.wk", normal({d, d}, sd, rng));
      b.wv = bb(p + "attn.wv", normal({d, d}, sd, rng));
      b.wo = bb(p + "attn.wo", normal({d, d}, sd * resid, rng));
      b.ln2_g = bb(p + "ln2.gamma", ones(d));
      b.ln2_b = bb(p + "ln2.beta", Tensor<T>({1, d}));
      b.ffn_k = bb(p + "ffn.w_k", normal({dm, d}, sd, rng));
      b.ffn_v = bb(p + "ffn.w_v", normal({d, dm}, resid / std::sqrt(static_cast<double>(dm)), rng));
      blocks_.push_back(b);
    }
    lnf_g_ = bb("ln_f.gamma", ones(d));
    lnf_b_ = bb("ln_f.beta", Tensor<T>({1, d}));
    lm_head_ = bb("lm_head", normal({V, d}, sd, rng));
  }

  static Tensor<T> causal_mask(std::size_t n) {
    Tensor<T> m({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m(i, j) = static_cast<T>(-1e9);
    return m;
  }

  ad::Var<T> activation(const ad::Var<T>& v) const {
    return config_.activation == Activation::relu ? ad::relu(v) : ad::gelu(v);
  }

  static ad::Var<T> affine_norm(const ad::Var<T>& x, const Parameter<T>& g,
                                const Parameter<T>& b) {
    return ad::add(ad::mul(ad::layer_norm(x), g.var()), b.var());
  }

  const LoraPair* lora_for(std::size_t l, const std::string& name) const {
    if (!lora_) return nullptr;
    for (const auto& [target, pair] : lora_layers_[l])
      if (target == name) return &pair;
    return nullptr;
  }

  ad::Var<T> weight(std::size_t l, const std::string& name, const Parameter<T>& base) const {
    const LoraPair* p = lora_for(l, name);
    if (!p) return base.var();
    const T factor = static_cast<T>(lora_->alpha / static_cast<double>(lora_->rank));
    return ad::add(base.var(), ad::scale(ad::matmul(p->b->var(), p->a->var()), factor));
  }

  static Tensor<T> scaled_relevance(const Tensor<T>& h, const Tensor<T>& r,
                                    const Tensor<T>& proj) {
    Tensor<T> out = matmul(matmul(h, r, false, true), proj);
    const T inv = T{1} / std::sqrt(static_cast<T>(r.rows()));
    for (auto& v : out.data()) v *= inv;
    return out;
  }

  // sigmoid(g) * (relevance + s * r_c), or the learned vector in ablation mode.
  ad::Var<T> gated_relevance(std::size_t l, const ad::Var<T>& h, const ad::Var<T>& w_v,
                              const SteeringInput<T>* steering) const {
    const BraceLayer& layer = brace_layers_[l];
    const ad::Var<T> g = ad::sigmoid(layer.gate->var());
    if (brace_->mode == BraceMode::ablation_no_rel) {
      return ad::mul(g, layer.rel->var());
    }
    const T inv = T{1} / std::sqrt(static_cast<T>(brace_->rank));
    ad::Var<T> basis, proj;
    const bool record = ad::grad_enabled() &&
                        (layer.seed->trainable() || w_v.requires_grad());
    if (record) {
      basis = ad::orthonormalize_rows(layer.seed->var());
      proj = ad::matmul(basis, w_v);
    } else {
      ensure_cache(l);
      const auto stamp = projection_stamp(l);
      basis = ad::constant(layer.cache->basis(stamp));
      proj = ad::constant(layer.cache->projection(stamp));
    }
    ad::Var<T> rel = ad::scale(ad::matmul(ad::matmul_nt(h, basis), proj), inv);
    if (steering) {
      ad::Var<T> r_c = ad::scale(ad::matmul(ad::matmul_nt(steering->h_c[l], basis), proj), inv);
      rel = ad::add(rel, ad::scale(r_c, steering->s));
    }
    return ad::mul(g, rel);
  }

  ModelConfig config_;
  Tokenizer tokenizer_;
  ParameterSet<T> params_;
  Parameter<T>* tok_emb_ = nullptr;
  Parameter<T>* pos_emb_ = nullptr;
  Parameter<T>* lnf_g_ = nullptr;
  Parameter<T>* lnf_b_ = nullptr;
  Parameter<T>* lm_head_ = nullptr;
  std::vector<Block> blocks_;
  std::optional<BraceConfig> brace_;
  std::vector<BraceLayer> brace_layers_;
  std::vector<SteerLayer> steer_layers_;
  std::optional<LoraSpec> lora_;
  std::vector<std::vector<std::pair<std::string, LoraPair>>> lora_layers_;
  std::vector<AttributeSet> attribute_sets_;
};

/// ModelConfig whose vocabulary matches the tokenizer.
inline ModelConfig with_vocab(ModelConfig cfg, const Tokenizer& tok) {
  cfg.vocab_size = tok.vocab_size();
  return cfg;
}

}  // namespace brace
