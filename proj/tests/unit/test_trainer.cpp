#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "brace/checkpoint.hpp"
#include "brace/corpus.hpp"
#include "brace/trainer.hpp"
#include "helpers.hpp"

using brace::Selector;
using brace::Tensor;
using brace::TrainConfig;

namespace {

std::vector<brace::Example> toy_examples() {
  return brace::lm_examples(brace::build_synthetic_style_corpus(61, 16).texts());
}

TrainConfig quick(Selector sel, std::size_t steps = 3) {
  TrainConfig c;
  c.selector = sel;
  c.max_steps = steps;
  c.batch_size = 4;
  c.peak_lr = 1e-2;
  c.seed = 9;
  return c;
}

std::map<std::string, Tensor<float>> snapshot(const brace::Model<float>& m) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& p : m.params()) out.emplace(p->name(), p->value());
  return out;
}

brace::Model<float> with_modules(Selector sel, std::uint64_t seed = 62) {
  auto m = testing_util::tiny_model<float>(seed);
  switch (sel) {
    case Selector::brace: m.attach_brace({.rank = 4}); break;
    case Selector::brace_steering:
      m.attach_brace({.rank = 4});
      m.attach_steering();
      break;
    case Selector::lora: m.attach_lora({.rank = 2}); break;
    case Selector::ablation_no_rel:
      m.attach_brace({.rank = 4, .mode = brace::BraceMode::ablation_no_rel});
      break;
    case Selector::backbone: break;
  }
  return m;
}

// Gauss-Jordan inverse of a small well-conditioned matrix.
Tensor<double> inverse(Tensor<double> a) {
  const std::size_t n = a.rows();
  auto inv = Tensor<double>::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(c, j), a(piv, j));
      std::swap(inv(c, j), inv(piv, j));
    }
    const double d = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= d;
      inv(c, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

}  // namespace

TEST(Schedule, PeakAtEndOfWarmupAndFinalAtEnd) {
  TrainConfig c;
  c.peak_lr = 2e-3;
  EXPECT_EQ(brace::lr_at(100, 500, c), 2e-3);
  EXPECT_EQ(brace::lr_at(500, 500, c), 0.2 * 2e-3);
  EXPECT_EQ(brace::lr_at(0, 500, c), 0.0);
  EXPECT_DOUBLE_EQ(brace::lr_at(50, 500, c), 1e-3);
  // Halfway through the decay the cosine term is zero: 0.2 + 0.4 = 0.6 of peak.
  EXPECT_NEAR(brace::lr_at(300, 500, c), 0.6 * 2e-3, 1e-18);
  c.peak_lr = 4e-2;
  EXPECT_EQ(brace::lr_at(0.2 * 37, 37, c), 4e-2);
  EXPECT_EQ(brace::lr_at(37, 37, c), 0.2 * 4e-2);
}

TEST(Schedule, ContinuousAtBoundaryAndMonotoneAfter) {
  TrainConfig c;
  const double total = 1000, warm = 200;
  EXPECT_NEAR(brace::lr_at(warm - 1e-6, total, c), c.peak_lr, 1e-8 * c.peak_lr);
  EXPECT_NEAR(brace::lr_at(warm + 1e-6, total, c), c.peak_lr, 1e-8 * c.peak_lr);
  double prev = brace::lr_at(warm, total, c);
  for (double s = warm + 1; s <= total; s += 1) {
    const double lr = brace::lr_at(s, total, c);
    ASSERT_LE(lr, prev) << s;
    prev = lr;
  }
}

TEST(Schedule, InvalidArguments) {
  TrainConfig c;
  EXPECT_THROW(brace::lr_at(0, 0, c), brace::Error);
  EXPECT_THROW(brace::lr_at(11, 10, c), brace::Error);
  c.warmup_ratio = 1.0;
  EXPECT_THROW(c.validate(), brace::ConfigError);
  c.warmup_ratio = 0.0;
  EXPECT_EQ(brace::lr_at(0, 10, c), c.peak_lr);
  c.final_lr_fraction = 0.0;
  EXPECT_THROW(c.validate(), brace::ConfigError);
}

TEST(TrainConfigIo, RoundTripsThroughKeyValueText) {
  TrainConfig c = quick(Selector::brace_steering, 17);
  c.weight_decay = 0.01;
  brace::KeyValueConfig kv;
  c.write(kv);
  auto back = TrainConfig::read(brace::KeyValueConfig::parse(kv.serialize()));
  EXPECT_EQ(back.selector, Selector::brace_steering);
  EXPECT_EQ(back.max_steps, 17u);
  EXPECT_EQ(back.weight_decay, 0.01);
  EXPECT_EQ(back.peak_lr, c.peak_lr);
  EXPECT_THROW(brace::parse_selector("everything"), brace::ConfigError);
}

TEST(Train, ZeroStepsLeavesCheckpointIdentical) {
  auto m = with_modules(Selector::brace);
  m.freeze_backbone();
  const auto before = brace::serialize_checkpoint(m);
  TrainConfig c = quick(Selector::brace, 0);
  c.epochs = 0;
  auto rep = brace::train(m, toy_examples(), c);
  EXPECT_EQ(rep.steps.size(), 0u);
  EXPECT_EQ(brace::serialize_checkpoint(m), before);
}

TEST(Train, OnlySelectedGroupsChangeForEverySelector) {
  const std::vector<Selector> all = {Selector::brace, Selector::brace_steering, Selector::lora,
                                     Selector::ablation_no_rel};
  for (Selector sel : all) {
    auto m = with_modules(sel);
    m.freeze_backbone();
    const auto checksum = m.backbone_checksum();
    const auto before = snapshot(m);
    std::vector<brace::AttributeSet> sets;
    auto ex = toy_examples();
    if (sel == Selector::brace_steering) {
      sets = {{"positive", {"amazing", "superb"}}, {"negative", {"awful", "vile"}}};
      ex = brace::steering_examples(
          brace::pair_sampler(brace::build_synthetic_style_corpus(63, 8), sets));
    }
    brace::train(m, ex, quick(sel, 4), sets);
    EXPECT_EQ(m.backbone_checksum(), checksum) << to_string(sel);
    for (const auto& p : m.params()) {
      const bool changed = p->value() != before.at(p->name());
      if (p->group() == brace::ParamGroup::backbone) {
        EXPECT_FALSE(changed) << p->name();
      }
      if (!p->trainable()) {
        EXPECT_FALSE(changed) << to_string(sel) << " " << p->name();
      }
    }
    // Zero-initialized maps must have moved.
    if (sel == Selector::brace_steering) {
      EXPECT_NE(m.steer_layers()[0].w2->value(), before.at("layers.0.steer.w2"));
    }
    if (sel == Selector::lora) {
      EXPECT_NE(m.params().at("layers.0.attn.wq.lora_b").value(),
                before.at("layers.0.attn.wq.lora_b"));
    }
  }
}

TEST(Train, BackboneSelectorTrainsBareModelOnly) {
  auto m = with_modules(Selector::backbone);
  const auto checksum = m.backbone_checksum();
  brace::train(m, toy_examples(), quick(Selector::backbone, 2));
  EXPECT_NE(m.backbone_checksum(), checksum);
  auto braced = with_modules(Selector::brace);
  EXPECT_THROW(brace::train(braced, toy_examples(), quick(Selector::backbone)), brace::ConfigError);
}

TEST(Train, SelectorModelMismatchIsAnError) {
  auto plain = with_modules(Selector::backbone);
  EXPECT_THROW(brace::train(plain, toy_examples(), quick(Selector::brace)), brace::ConfigError);
  EXPECT_THROW(brace::train(plain, toy_examples(), quick(Selector::lora)), brace::ConfigError);
  auto braced = with_modules(Selector::brace);
  EXPECT_THROW(brace::train(braced, toy_examples(), quick(Selector::brace_steering)),
               brace::ConfigError);
  EXPECT_THROW(brace::train(braced, toy_examples(), quick(Selector::ablation_no_rel)),
               brace::ConfigError);
  std::vector<brace::Example> steer = {{"text", 0, 1.0}};
  EXPECT_THROW(brace::train(braced, steer, quick(Selector::brace)), brace::ConfigError);
}

TEST(Train, DeterministicForFixedSeed) {
  auto run = [](std::uint64_t seed) {
    auto m = with_modules(Selector::brace);
    m.freeze_backbone();
    auto c = quick(Selector::brace, 5);
    c.seed = seed;
    auto rep = brace::train(m, toy_examples(), c);
    return std::make_pair(brace::checkpoint_digest(brace::serialize_checkpoint(m)), rep.to_tsv());
  };
  const auto a = run(1), b = run(1), c = run(2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.first, c.first);
}

TEST(Train, NonFiniteLossAbortsWithStepIndex) {
  auto m = with_modules(Selector::brace);
  m.freeze_backbone();
  auto* gate = m.brace_layers()[0].gate;
  auto poison = [&](const brace::StepRecord& r, const brace::Model<float>&) {
    if (r.step == 2) gate->mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  };
  try {
    brace::train(m, toy_examples(), quick(Selector::brace, 5), {}, poison);
    FAIL();
  } catch (const brace::Error& e) {
    EXPECT_NE(std::string(e.what()).find("at step 3"), std::string::npos) << e.what();
  }
}

TEST(Train, ReportIsTabSeparatedWithHeader) {
  auto m = with_modules(Selector::brace);
  auto rep = brace::train(m, toy_examples(), quick(Selector::brace, 2));
  const auto tsv = rep.to_tsv();
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "step\tlr\tloss");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);
  EXPECT_EQ(rep.steps[0].step, 1u);
  for (auto& r : rep.steps) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(AdamW, DecayExcludesGatesAndBiases) {
  auto m = with_modules(Selector::brace_steering);
  for (const auto& p : m.params()) {
    const auto g = p->group();
    if (g == brace::ParamGroup::brace_gate || g == brace::ParamGroup::steer_bias) {
      EXPECT_FALSE(brace::decays(*p)) << p->name();
    }
    if (g == brace::ParamGroup::brace_seed || g == brace::ParamGroup::steer_weight) {
      EXPECT_TRUE(brace::decays(*p)) << p->name();
    }
  }
  EXPECT_FALSE(brace::decays(m.params().at("layers.0.ln1.gamma")));
  EXPECT_TRUE(brace::decays(m.params().at("layers.0.attn.wq")));
}

TEST(CountParams, LlamaShapes) {
  auto s16 = brace::ModelShape::parse("L=32,d=4096,r=16");
  auto s32 = brace::ModelShape::parse("L=32,d=4096,r=32");
  EXPECT_EQ(brace::count_params(s16, Selector::brace), 2097184u);
  EXPECT_EQ(brace::count_params(s32, Selector::brace), 4194336u);
  EXPECT_EQ(brace::count_params(s16, Selector::lora), 8388608u);
  EXPECT_EQ(brace::humanize_count(2097184), "2.1M");
  EXPECT_EQ(brace::humanize_count(4194336), "4.2M");
  EXPECT_EQ(brace::humanize_count(8388608), "8.4M");
  EXPECT_NEAR(static_cast<double>(brace::count_params(s16, Selector::brace)) /
                  static_cast<double>(brace::count_params(s16, Selector::lora)),
              0.25, 5e-6);
  EXPECT_THROW(brace::ModelShape::parse("L=32,q=3"), brace::ConfigError);
  EXPECT_THROW(brace::count_params(s16, Selector::backbone), brace::ConfigError);
}

TEST(CountParams, BraceBelowEqualRankLoraForAllRanks) {
  for (std::size_t d : {8u, 64u, 512u}) {
    for (std::size_t r = 1; r < d; ++r) {
      brace::ModelShape s;
      s.n_layers = 4;
      s.d = d;
      s.d_r = r;
      s.lora.rank = r;
      ASSERT_LT(brace::count_params(s, Selector::brace), brace::count_params(s, Selector::lora));
    }
  }
}

TEST(CountParams, MatchesTrainableCountOfBuiltModels) {
  const std::vector<Selector> all = {Selector::brace, Selector::brace_steering, Selector::lora,
                                     Selector::ablation_no_rel, Selector::backbone};
  for (Selector sel : all) {
    auto m = with_modules(sel);
    brace::apply_selector(m, sel);
    auto shape = brace::ModelShape::of(m.config(), 4, m.has_lora() ? m.lora_spec() : brace::LoraSpec{.rank = 2});
    EXPECT_EQ(brace::count_trainable(m), brace::count_params(shape, sel)) << to_string(sel);
  }
}

TEST(Lora, FullRankAdapterRepresentsAnyDelta) {
  brace::Rng rng(64);
  auto m = testing_util::tiny_model<double>(64, 1, 4, 8);
  m.attach_lora({.rank = 4, .targets = {"attn.wq"}, .alpha = 4.0});
  auto target_delta = testing_util::randn<double>(rng, 4, 4);
  auto& a = m.params().at("layers.0.attn.wq.lora_a");
  auto& b = m.params().at("layers.0.attn.wq.lora_b");

  // Least-squares oracle: with A invertible, B = delta A^{-1} fits exactly.
  b.assign(brace::matmul(target_delta, inverse(a.value())));
  auto fit = m.effective_weight(0, "attn.wq");
  auto base = m.base_weight(0, "attn.wq").value();
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(fit[i] - base[i], target_delta[i], 1e-10);

  // Gradient fitting from the zero-initialized adapter reaches the same delta.
  b.assign(Tensor<double>({4, 4}));
  TrainConfig c;
  c.peak_lr = 2e-2;
  c.warmup_ratio = 0.0;
  c.clip_norm = 0.0;
  brace::AdamW<double> opt({&a, &b}, c);
  const auto target = brace::ad::constant(target_delta);
  double loss = 0;
  for (int step = 0; step < 3000; ++step) {
    a.zero_grad();
    b.zero_grad();
    auto diff = brace::ad::sub(brace::ad::matmul(b.var(), a.var()), target);
    auto l = brace::ad::sum(brace::ad::mul(diff, diff));
    loss = l.item();
    brace::ad::backward(l);
    opt.step(2e-2 * (1.0 - step / 3000.0) + 1e-4);
  }
  EXPECT_LT(loss, 1e-8);
}
