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

#include "dpckpt/privacy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "dpckpt/errors.h"
#include "dpckpt/rng.h"

namespace dpckpt {
namespace {

TEST(CalibrateTheoreticalTest, ClosedForm) {
  EXPECT_NEAR(CalibrateTheoretical(1, 100, 1000, 0.5).variance_per_step, 0.1,
              1e-15);
  EXPECT_NEAR(CalibrateTheoretical(2, 50, 500, 1).variance_per_step, 0.2,
              1e-15);
  EXPECT_DOUBLE_EQ(CalibrateTheoretical(1, 100, 1000, 0.5).stddev(),
                   std::sqrt(0.1));
}

TEST(CalibrateTheoreticalTest, DoubledRhoHalvesVariance) {
  for (double rho : {0.01, 0.3, 0.5, 2.0, 17.0}) {
    EXPECT_EQ(CalibrateTheoretical(1.3, 77, 1234, 2 * rho).variance_per_step,
              0.5 * CalibrateTheoretical(1.3, 77, 1234, rho).variance_per_step);
  }
}

TEST(CalibrateTheoreticalTest, HomogeneousInLipschitz) {
  const double base = CalibrateTheoretical(1.0, 40, 300, 0.7).variance_per_step;
  for (double c : {0.5, 2.0, 3.0, 10.0}) {
    EXPECT_NEAR(CalibrateTheoretical(c, 40, 300, 0.7).variance_per_step,
                c * c * base, 1e-14 * c * c);
  }
}

TEST(CalibrateTheoreticalTest, NonpositiveArgumentsThrow) {
  EXPECT_THROW(CalibrateTheoretical(0, 1, 1, 1), InvalidArgument);
  EXPECT_THROW(CalibrateTheoretical(1, 0, 1, 1), InvalidArgument);
  EXPECT_THROW(CalibrateTheoretical(1, 1, 0, 1), InvalidArgument);
  EXPECT_THROW(CalibrateTheoretical(1, 1, 1, 0), InvalidArgument);
  EXPECT_THROW(CalibrateTheoretical(-1, 1, 1, 1), InvalidArgument);
}

TEST(ZcdpToEpsilonTest, ClosedForm) {
  const double expected = 0.5 + 2.0 * std::sqrt(0.5 * std::log(1e5));
  EXPECT_NEAR(ZcdpToEpsilon(0.5, 1e-5), expected, 1e-12);
  EXPECT_NEAR(ZcdpToEpsilon(0.5, 1e-5), 5.298526, 1e-6);
}

TEST(ZcdpToEpsilonTest, LimitsAndMonotonicity) {
  EXPECT_LT(ZcdpToEpsilon(1e-14, 1e-5), 1e-5);
  EXPECT_GT(ZcdpToEpsilon(0.5, 1e-6), ZcdpToEpsilon(0.5, 1e-5));
  double prev = 0.0;
  for (double rho = 1e-4; rho < 100; rho *= 1.7) {
    const double eps = ZcdpToEpsilon(rho, 1e-5);
    EXPECT_GE(eps, rho);
    EXPECT_GT(eps, prev);
    prev = eps;
  }
  EXPECT_THROW(ZcdpToEpsilon(0.5, 0.0), InvalidArgument);
  EXPECT_THROW(ZcdpToEpsilon(0.5, 1.0), InvalidArgument);
}

TEST(ZcdpToEpsilonTest, InverseRoundTrips) {
  for (double eps : {0.1, 1.0, 5.29856, 8.0, 50.0}) {
    for (double delta : {1e-3, 1e-5, 1e-9}) {
      const double rho = EpsilonToZcdp(eps, delta);
      EXPECT_NEAR(ZcdpToEpsilon(rho, delta), eps, 1e-9 * eps);
    }
  }
}

TEST(ComposeZcdpTest, Examples) {
  const std::vector<double> three{0.1, 0.2, 0.3};
  EXPECT_NEAR(ComposeZcdp(three), 0.6, 1e-15);
  EXPECT_EQ(ComposeZcdp(std::vector<double>{}), 0.0);
  const std::vector<double> hundred(100, CalibratePractical(1.0, 10.0).rho_per_step);
  EXPECT_NEAR(ComposeZcdp(hundred), 0.5, 1e-12);
}

TEST(ComposeZcdpTest, PermutationInvariant) {
  // Dyadic values make floating-point addition exact in any order.
  std::vector<double> rhos;
  for (int i = 1; i <= 12; ++i) rhos.push_back(i / 64.0);
  const double base = ComposeZcdp(rhos);
  PhiloxEngine rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(rhos.begin(), rhos.end(), rng);
    EXPECT_EQ(ComposeZcdp(rhos), base);
  }
}

TEST(CalibratePracticalTest, Examples) {
  EXPECT_DOUBLE_EQ(CalibratePractical(1.0, 1.0).rho_per_step, 0.5);
  EXPECT_DOUBLE_EQ(CalibratePractical(1.0, 3.0).sum_noise_stddev, 3.0);
  EXPECT_DOUBLE_EQ(CalibratePractical(2.0, 3.0).sum_noise_stddev, 6.0);
  EXPECT_NEAR(100 * CalibratePractical(1.0, 10.0).rho_per_step, 0.5, 1e-15);
  EXPECT_THROW(CalibratePractical(0.0, 1.0), InvalidArgument);
  EXPECT_THROW(CalibratePractical(1.0, -1.0), InvalidArgument);
}

TEST(CalibratePracticalTest, NoiseMultiplierInverts) {
  const double z = NoiseMultiplierForBudget(0.5, 100);
  EXPECT_NEAR(z, 10.0, 1e-12);
  EXPECT_NEAR(100 * CalibratePractical(1.0, z).rho_per_step, 0.5, 1e-12);
}

TEST(PrivacyBudgetTest, FromRhoConverts) {
  const PrivacyBudget b = PrivacyBudget::FromRho(0.5, 1e-5);
  EXPECT_EQ(b.rho, 0.5);
  EXPECT_EQ(b.epsilon, ZcdpToEpsilon(0.5, 1e-5));
  const PrivacyBudget inf =
      PrivacyBudget::FromRho(std::numeric_limits<double>::infinity(), 1e-5);
  EXPECT_TRUE(std::isinf(inf.epsilon));
}

TEST(AuditTest, EmpiricalLossRespectsConversion) {
  for (double rho : {0.05, 0.5, 2.0}) {
    const PrivacyAuditResult r = AuditGaussianSumQuery(rho, 1e-5, 1000000, 42);
    EXPECT_TRUE(r.Holds()) << "rho " << rho;
    // The closed-form hockey-stick divergence never exceeds the promise.
    EXPECT_LE(r.delta_exact, r.delta_bound);
    EXPECT_NEAR(r.delta_empirical, r.delta_exact,
                3 * r.delta_standard_error + 1e-12);
    EXPECT_LE(r.max_event_violation, 3 * r.event_standard_error);
  }
}

}  // namespace
}  // namespace dpckpt
