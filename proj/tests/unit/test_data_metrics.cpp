#include <gtest/gtest.h>

#include <cctype>
#include <cmath>
#include <set>

#include "brace/corpus.hpp"
#include "brace/generate.hpp"
#include "brace/metrics.hpp"
#include "helpers.hpp"

using brace::Tensor;

namespace {

double dist_n_reference(const std::vector<std::vector<std::string>>& lists, std::size_t n) {
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto& toks : lists) {
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      std::string key;
      for (std::size_t k = 0; k < n; ++k) key += toks[i + k] + '\x1f';
      seen.insert(key);
      ++total;
    }
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

brace::Model<double> steered(std::uint64_t seed) {
  auto m = testing_util::tiny_model<double>(seed);
  m.attach_brace({.rank = 4});
  m.attach_steering();
  m.freeze_backbone();
  return m;
}

const brace::AttributeSet kPos{"positive", {"great", "lovely"}};

}  // namespace

TEST(DistN, HandExamples) {
  EXPECT_DOUBLE_EQ(brace::dist_n({"a a a"}, 1), 1.0 / 3.0);
  EXPECT_EQ(brace::dist_n({"a b c d"}, 2), 1.0);
  const std::vector<std::string> once = {"x y x z", "y z"};
  const std::vector<std::string> twice = {"x y x z", "y z", "x y x z", "y z"};
  for (std::size_t n = 1; n <= 2; ++n)
    EXPECT_DOUBLE_EQ(brace::dist_n(twice, n), brace::dist_n(once, n) / 2);
}

TEST(DistN, Errors) {
  EXPECT_THROW(brace::dist_n({"a b"}, 3), brace::Error);
  EXPECT_THROW(brace::dist_n({}, 1), brace::Error);
  EXPECT_THROW(brace::dist_n({"a b c"}, 0), brace::Error);
  EXPECT_THROW(brace::dist_n({"a b c d"}, 4), brace::Error);
  EXPECT_EQ(brace::dist_n({"a", "b c d"}, 3), 1.0);
}

TEST(DistN, MatchesBruteForceOnRandomLists) {
  brace::Rng rng(71);
  const std::vector<std::string> vocab = {"a", "b", "c", "dd", "e", "f"};
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.uniform_int(3);
    std::vector<std::vector<std::string>> lists(1 + rng.uniform_int(4));
    std::vector<std::string> texts;
    std::size_t longest = 0;
    for (auto& l : lists) {
      l.resize(rng.uniform_int(9));
      std::string text;
      for (auto& w : l) {
        w = vocab[rng.uniform_int(vocab.size())];
        text += (rng.uniform() < 0.3 ? "  " : " ") + w;
      }
      longest = std::max(longest, l.size());
      texts.push_back(text);
    }
    if (longest < n) {
      ASSERT_THROW(brace::dist_n(texts, n), brace::Error);
      continue;
    }
    ASSERT_EQ(brace::dist_n(texts, n), dist_n_reference(lists, n)) << t;
  }
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  auto m = testing_util::tiny_model<double>(72);
  m.params().at("lm_head").mutable_value().fill(0.0);
  const double v = static_cast<double>(m.config().vocab_size);
  EXPECT_NEAR(brace::perplexity(m, {"some text", "more"}), v, 1e-6);
  EXPECT_THROW(brace::perplexity(m, {}), brace::Error);
}

TEST(Perplexity, MatchesIndependentCrossEntropyLoop) {
  auto m = testing_util::tiny_model<double>(73);
  const std::vector<std::string> texts = {"alpha beta", "g", "the film was fine ."};
  long double nll = 0;
  std::size_t count = 0;
  for (const auto& t : texts) {
    auto ids = m.frame(t);
    auto logits = m.forward(std::span<const int>(ids).first(ids.size() - 1)).logits.value();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      long double z = 0;
      for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp((long double)logits(i, j));
      nll += std::log(z) - logits(i, static_cast<std::size_t>(ids[i + 1]));
      ++count;
    }
  }
  const double ref = std::exp((double)(nll / count));
  EXPECT_NEAR(brace::perplexity(m, texts), ref, 1e-6 * ref);
  EXPECT_GE(brace::perplexity(m, texts), 1.0);
}

TEST(Perplexity, ZeroSteeringMatchesNoSteering) {
  auto m = steered(74);
  brace::Rng rng(74);
  testing_util::randomize(m, brace::ParamGroup::steer_weight, rng, 0.5);
  auto enc = m.encode_attribute(kPos);
  auto s0 = enc.steer(0.0);
  const std::vector<std::string> texts = {"a b c", "hello"};
  EXPECT_NEAR(brace::perplexity(m, texts, &s0), brace::perplexity(m, texts), 1e-6);
}

TEST(Corpus, DeterministicBalancedAndMarked) {
  const auto a = brace::build_synthetic_style_corpus(5, 40);
  EXPECT_EQ(a, brace::build_synthetic_style_corpus(5, 40));
  EXPECT_NE(a, brace::build_synthetic_style_corpus(6, 40));
  EXPECT_EQ(a.count("positive"), 20u);
  EXPECT_EQ(a.count("negative"), 20u);
  const auto& pos = brace::default_positive_markers();
  const auto& neg = brace::default_negative_markers();
  std::size_t pos_in_pos = 0, pos_in_neg = 0;
  for (const auto& it : a.items) {
    const auto& own = it.label == "positive" ? pos : neg;
    const auto& other = it.label == "positive" ? neg : pos;
    EXPECT_GE(brace::count_markers(it.text, own), 1u) << it.text;
    EXPECT_EQ(brace::count_markers(it.text, other), 0u) << it.text;
    (it.label == "positive" ? pos_in_pos : pos_in_neg) += brace::count_markers(it.text, pos);
  }
  EXPECT_GT(pos_in_pos, pos_in_neg);
  EXPECT_THROW(brace::build_synthetic_style_corpus(1, 7), brace::Error);
  EXPECT_THROW(brace::build_synthetic_style_corpus(1, 0), brace::Error);
}

TEST(Corpus, MarkersComeFromShippedAttributeLists) {
  const auto pos = brace::load_attribute_file(BRACE_DATA_DIR "/attributes/positive.txt");
  const auto neg = brace::load_attribute_file(BRACE_DATA_DIR "/attributes/negative.txt");
  // The shipped lists are capitalized; the corpus uses lower case.
  auto lower = [](const std::vector<std::string>& v) {
    std::set<std::string> out;
    for (auto w : v) {
      for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.insert(w);
    }
    return out;
  };
  const auto p = lower(pos.tokens), n = lower(neg.tokens);
  for (const auto& w : brace::default_positive_markers()) EXPECT_TRUE(p.count(w)) << w;
  for (const auto& w : brace::default_negative_markers()) EXPECT_TRUE(n.count(w)) << w;
  const auto toxic = brace::load_attribute_file(BRACE_DATA_DIR "/attributes/toxic.txt");
  EXPECT_EQ(toxic.tokens.size(), 100u);
  for (const auto& t : toxic.tokens) EXPECT_NE(t.front(), '#');
}

TEST(Corpus, FileFormatRoundTripAndSplit) {
  const auto c = brace::build_synthetic_style_corpus(8, 20);
  EXPECT_EQ(brace::parse_corpus(brace::format_corpus(c)), c);
  EXPECT_THROW(brace::parse_corpus("no tab"), brace::FormatError);
  EXPECT_THROW(brace::parse_corpus("\n\n"), brace::Error);
  auto [train, val] = brace::split_corpus(c, 0.2);
  EXPECT_EQ(train.items.size() + val.items.size(), 20u);
  EXPECT_EQ(val.count("positive"), val.count("negative"));
  EXPECT_EQ(val.items.size(), 4u);
}

TEST(Tokenizer, RoundTripsCharAndByteModes) {
  brace::Rng rng(75);
  auto chars = brace::Tokenizer::chars();
  auto bytes = brace::Tokenizer::bytes();
  EXPECT_EQ(chars.vocab_size(), 100u);
  for (int t = 0; t < 200; ++t) {
    std::string s;
    for (std::size_t i = rng.uniform_int(40); i > 0; --i) {
      const auto k = rng.uniform_int(97);
      s.push_back(k == 0 ? '\t' : k == 1 ? '\n' : static_cast<char>(30 + k));
    }
    ASSERT_EQ(chars.decode(chars.encode(s)), s);
    std::string b;
    for (std::size_t i = rng.uniform_int(40); i > 0; --i)
      b.push_back(static_cast<char>(rng.uniform_int(256)));
    ASSERT_EQ(bytes.decode(bytes.encode(b)), b);
  }
  EXPECT_THROW(chars.encode("caf\xc3\xa9"), brace::Error);
}

TEST(Tokenizer, WordListMapsUnknownWords) {
  auto w = brace::Tokenizer::words({"the", "film", "was"});
  EXPECT_EQ(w.encode("the film was long"), (std::vector<int>{0, 1, 2, w.unk()}));
  EXPECT_EQ(w.decode(w.encode("the  film")), "the film");
  EXPECT_EQ(w.vocab_size(), 7u);
  EXPECT_THROW(brace::Tokenizer::words({"a", "a"}), brace::ConfigError);
}

TEST(Generate, DeterministicForSeedAndGreedyIgnoresSeed) {
  auto m = testing_util::tiny_model<double>(76);
  brace::SamplingOptions o;
  o.max_tokens = 12;
  o.seed = 3;
  const auto a = brace::generate(m, "the ", o);
  const auto b = brace::generate(m, "the ", o);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.text, b.text);
  o.seed = 4;
  EXPECT_NE(brace::generate(m, "the ", o).ids, a.ids);
  o.temperature = 0;
  const auto g1 = brace::generate(m, "the ", o);
  o.seed = 99;
  const auto g2 = brace::generate(m, "the ", o);
  EXPECT_EQ(g1.ids, g2.ids);
  // Greedy picks the argmax of each step's distribution.
  std::vector<int> ctx{m.tokenizer().bos()};
  for (int t : m.tokenizer().encode("the ")) ctx.push_back(t);
  for (int id : g1.ids) {
    auto logits = m.forward(ctx).logits.value();
    const std::size_t row = ctx.size() - 1;
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(row, j) > logits(row, best)) best = j;
    ASSERT_EQ(static_cast<std::size_t>(id), best);
    ctx.push_back(id);
  }
}

TEST(Generate, LogprobsAreNormalizedLogs) {
  auto m = testing_util::tiny_model<double>(77);
  brace::SamplingOptions o;
  o.max_tokens = 8;
  o.top_k = 5;
  o.seed = 1;
  const auto g = brace::generate(m, "x", o);
  ASSERT_EQ(g.logprobs.size(), g.ids.size());
  for (double lp : g.logprobs) {
    EXPECT_LE(lp, 0.0);
    EXPECT_GE(lp, std::log(1e-300));
  }
}

TEST(Generate, ZeroSteeringMatchesUnsteeredText) {
  auto m = steered(78);
  brace::Rng rng(78);
  testing_util::randomize(m, brace::ParamGroup::steer_weight, rng, 0.5);
  for (auto& l : m.brace_layers()) l.gate->mutable_value()[0] = 2.0;
  auto enc = m.encode_attribute(kPos);
  auto s0 = enc.steer(0.0);
  brace::SamplingOptions o;
  o.max_tokens = 16;
  o.seed = 12;
  EXPECT_EQ(brace::generate(m, "a ", o, &s0).ids, brace::generate(m, "a ", o).ids);
}

TEST(Generate, InvalidRequests) {
  auto m = testing_util::tiny_model<double>(79);
  brace::SamplingOptions o;
  o.max_tokens = 0;
  EXPECT_THROW(brace::generate(m, "a", o), brace::Error);
  o.max_tokens = 4;
  EXPECT_THROW(brace::generate(m, std::string(63, 'a'), o), brace::Error);
  o.temperature = -1;
  EXPECT_THROW(brace::generate(m, "a", o), brace::Error);
}

TEST(MarkerCurve, UntrainedSteeringIsFlat) {
  auto m = steered(80);
  EXPECT_TRUE(brace::steering_untrained(m));
  auto enc = m.encode_attribute(kPos);
  const auto curve = brace::marker_logprob_curve(m, {"the film was ", "a "}, enc, {"great", "lovely"},
                                                 {-2, -1, 0, 1, 2});
  ASSERT_EQ(curve.size(), 5u);
  for (double v : curve) EXPECT_NEAR(v, curve[2], 1e-6);
}

TEST(MarkerCurve, MatchesDirectLogSumExp) {
  auto m = steered(81);
  brace::Rng rng(81);
  testing_util::randomize(m, brace::ParamGroup::steer_weight, rng, 0.5);
  EXPECT_FALSE(brace::steering_untrained(m));
  auto enc = m.encode_attribute(kPos);
  const std::vector<std::string> prompts = {"it was ", "so "};
  const std::vector<std::string> markers = {"great", "ok"};
  const auto curve = brace::marker_logprob_curve(m, prompts, enc, markers, {1.5});
  auto in = enc.steer(1.5);
  double acc = 0;
  for (const auto& p : prompts) {
    double mass = 0;
    for (const auto& w : markers) mass += std::exp(brace::continuation_logprob(m, p, w, &in));
    acc += std::log(mass);
  }
  EXPECT_NEAR(curve[0], acc / 2, 1e-9);
}
