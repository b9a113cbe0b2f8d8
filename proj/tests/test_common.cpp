#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <stdexcept>

#include "demosel/common.hpp"

using namespace demosel;

TEST(Seeds, DeriveSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t p = 0; p < 20; ++p)
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(p, i));
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Seeds, Mix64KnownValue) {
  // splitmix64 output for state 0 after one increment
  EXPECT_EQ(mix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Random, UniformIndexStaysInRangeAndCoversIt) {
  std::mt19937_64 rng(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto x = uniform_index(rng, 7);
    ASSERT_LT(x, 7u);
    ++hits[x];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_THROW(uniform_index(rng, 0), std::invalid_argument);
}

TEST(Random, UnitUniformInHalfOpenInterval) {
  std::mt19937_64 rng(2);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = unit_uniform(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 10000, 0.5, 0.02);
}

TEST(Random, SampleSortedIsSortedDistinct) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const auto s = sample_sorted(20, 6, rng);
    ASSERT_EQ(s.size(), 6u);
    ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
    ASSERT_EQ(std::set<std::uint32_t>(s.begin(), s.end()).size(), 6u);
    ASSERT_LT(s.back(), 20u);
  }
  EXPECT_EQ(sample_sorted(5, 5, rng), (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
}

TEST(Random, ShuffleIsPermutation) {
  std::mt19937_64 rng(4);
  std::vector<int> v(30);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  shuffle_in_place(w, rng);
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}

TEST(Stats, CompensatedSumBeatsNaive) {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  EXPECT_DOUBLE_EQ(s.value(), 1000.0);
}

TEST(Stats, MeanAndStandardError) {
  const auto e = estimate_mean({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
  // sample variance 5/3, se = sqrt(5/12)
  EXPECT_NEAR(e.std_error, std::sqrt(5.0 / 12.0), 1e-15);
  EXPECT_EQ(e.count, 4u);
  EXPECT_EQ(estimate_mean({}).count, 0u);
  EXPECT_EQ(estimate_mean({3.0}).std_error, 0.0);
}

TEST(Parallel, FillsEverySlotForAnyThreadCount) {
  for (unsigned t : {1u, 2u, 5u}) {
    std::vector<std::size_t> out(100, 0);
    parallel_for(out.size(), t, [&](std::size_t i) { out[i] = i * i; });
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], i * i);
  }
}

TEST(Parallel, RethrowsTaskException) {
  EXPECT_THROW(parallel_for(50, 4,
                            [](std::size_t i) {
                              if (i == 17) throw ValidationError("boom");
                            }),
               ValidationError);
}
