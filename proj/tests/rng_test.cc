// Copyright 2026 The dpckpt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpckpt/rng.h"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

namespace dpckpt {
namespace {

// Known-answer vectors published with Random123.
TEST(PhiloxTest, KnownAnswers) {
  EXPECT_EQ(Philox4x32({0, 0, 0, 0}, {0, 0}),
            (PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                       {0xffffffff, 0xffffffff}),
            (PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                       {0xa4093822, 0x299f31d0}),
            (PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterRngTest, LookupsArePureFunctionsOfKeyAndCounter) {
  CounterRng a(42), b(42), c(43);
  EXPECT_EQ(a.Gaussian(7, 3), b.Gaussian(7, 3));
  EXPECT_NE(a.Gaussian(7, 3), c.Gaussian(7, 3));
  EXPECT_NE(a.Gaussian(7, 3), a.Gaussian(8, 3));
  // Order of evaluation does not matter.
  const double late = a.Gaussian(100, 5);
  (void)a.Gaussian(1, 1);
  EXPECT_EQ(late, b.Gaussian(100, 5));
}

TEST(CounterRngTest, GaussianMoments) {
  CounterRng rng(1);
  const int n = 200000;
  double sum = 0, sum2 = 0, sum4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.Gaussian(0, i);
    sum += z;
    sum2 += z * z;
    sum4 += z * z * z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sum2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(sum4 / n, 3.0, 0.1);
}

TEST(PhiloxEngineTest, UniformsInOpenIntervalAndUnbiased) {
  PhiloxEngine rng(9);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.NextUniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12 / n));
}

TEST(PhiloxEngineTest, NextBelowCoversRange) {
  PhiloxEngine rng(3);
  std::set<uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const uint64_t v = rng.NextBelow(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(rng.NextBelow(1), 0u);
}

TEST(DeriveSeedTest, ChildrenDiffer) {
  std::set<uint64_t> seeds;
  for (uint64_t i = 0; i < 1000; ++i) seeds.insert(DeriveSeed(5, i));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_EQ(DeriveSeed(5, 1), DeriveSeed(5, 1));
}

}  // namespace
}  // namespace dpckpt
