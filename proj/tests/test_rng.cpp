#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "fedasmu/rng.hpp"

using namespace fedasmu;

TEST(Rng, SameSeedSameStream) {
  Rng a = make_rng(9, Stream::device_round, 3, 4);
  Rng b = make_rng(9, Stream::device_round, 3, 4);
  for (int i = 0; i < 100; ++i)
    EXPECT_EQ(a(), b());
}

TEST(Rng, DistinctTagsGiveDistinctSeeds) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 5; ++s)
    for (std::uint64_t tag = 1; tag <= 7; ++tag)
      for (std::uint64_t a = 0; a < 20; ++a)
        seen.insert(derive_seed({s, tag, a, 0}));
  EXPECT_EQ(seen.size(), 5u * 7u * 20u);
}

TEST(Rng, Uniform01InRange) {
  Rng r(1);
  double lo = 1, hi = 0, sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(r);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / 100000, 0.5, 0.01);
}

TEST(Rng, UniformIndexFrequencies) {
  Rng r(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i)
    ++counts[uniform_index(r, 7)];
  // chi-square with 6 dof; 22.46 is the 0.999 quantile
  double chi = 0;
  for (int c : counts)
    chi += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi, 22.46);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(8);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  shuffle(w.begin(), w.end(), r);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}
