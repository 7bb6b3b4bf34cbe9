#include <gtest/gtest.h>

#include "brace/rng.hpp"
#include "brace/tensor.hpp"
#include "helpers.hpp"

using brace::Tensor;
using testing_util::naive_matmul;
using testing_util::naive_transpose;
using testing_util::randn;

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), brace::ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, IdentityTimesXIsX) {
  brace::Rng rng(1);
  for (std::size_t k : {1u, 4u, 7u}) {
    auto x = randn<double>(rng, 3, k);
    EXPECT_EQ(brace::matmul(Tensor<double>::identity(3), x), x);
  }
}

TEST(Tensor, MatmulMatchesTripleLoopForAllTransposeCombinations) {
  brace::Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(6), k = 1 + rng.uniform_int(6),
                      n = 1 + rng.uniform_int(6);
    auto a = randn<double>(rng, m, k);
    auto b = randn<double>(rng, k, n);
    const auto ref = naive_matmul(a, b);
    EXPECT_LT(brace::max_abs_diff(brace::matmul(a, b), ref), 1e-12);
    EXPECT_LT(brace::max_abs_diff(brace::matmul(naive_transpose(a), b, true, false), ref), 1e-12);
    EXPECT_LT(brace::max_abs_diff(brace::matmul(a, naive_transpose(b), false, true), ref), 1e-12);
    EXPECT_LT(brace::max_abs_diff(
                  brace::matmul(naive_transpose(a), naive_transpose(b), true, true), ref),
              1e-12);
  }
}

TEST(Tensor, MatmulShapeErrorNamesBothShapes) {
  Tensor<float> a({2, 3}), b({4, 5});
  try {
    brace::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const brace::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4, 5)"), std::string::npos) << msg;
  }
}

TEST(Rng, MatchesReferenceMersenneTwisterStream) {
  // 10000th output of mt19937_64 with the default seed, per the C++ standard.
  brace::Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, DeterministicAndSeedSensitive) {
  brace::Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    (void)c;
  }
  brace::Rng d(7);
  EXPECT_NE(d.uniform(), c.uniform());
}

TEST(Rng, UniformIntIsInRangeAndCoversIt) {
  brace::Rng rng(3);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.uniform_int(5);
    ASSERT_LT(v, 5u);
    ++seen[v];
  }
  for (int s : seen) EXPECT_GT(s, 150);
}
