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

#include "dpckpt/uncertainty.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dpckpt/errors.h"
#include "oracles.h"

namespace dpckpt {
namespace {

TEST(TQuantileTest, Examples) {
  for (int64_t dof : {1, 2, 4, 30, 1000000}) EXPECT_EQ(TQuantile(dof, 0.5), 0.0);
  EXPECT_NEAR(TQuantile(4, 0.975), 2.776, 1e-3);
  EXPECT_NEAR(TQuantile(1000000, 0.975), 1.95996, 1e-3);
  EXPECT_NEAR(TQuantile(1, 0.975), 12.7062, 1e-4);
  EXPECT_THROW(TQuantile(4, 0.0), InvalidArgument);
  EXPECT_THROW(TQuantile(4, 1.0), InvalidArgument);
  EXPECT_THROW(TQuantile(0, 0.9), InvalidArgument);
}

TEST(TQuantileTest, MatchesSimpsonIntegration) {
  for (int dof : {1, 2, 4, 9, 19}) {
    for (double p : {0.6, 0.9, 0.975, 0.995}) {
      EXPECT_NEAR(TQuantile(dof, p), oracle::TQuantileSimpson(dof, p),
                  1e-6 * std::max(1.0, oracle::TQuantileSimpson(dof, p)))
          << dof << " " << p;
    }
  }
  EXPECT_NEAR(TQuantile(1000000, 0.975), oracle::NormalQuantile(0.975), 1e-5);
}

TEST(TQuantileTest, AntisymmetricAndMonotone) {
  for (int dof : {1, 3, 10, 100}) {
    double prev = -1e300;
    for (double p = 0.01; p < 0.995; p += 0.01) {
      const double q = TQuantile(dof, p);
      EXPECT_EQ(q, -TQuantile(dof, 1.0 - p));
      EXPECT_GT(q, prev);
      prev = q;
    }
  }
}

TEST(StudentTCdfTest, MatchesSimpson) {
  for (int dof : {1, 3, 7}) {
    for (double x : {0.3, 1.0, 2.5, 6.0}) {
      EXPECT_NEAR(StudentTCdf(x, dof), oracle::TCdfSimpson(x, dof), 1e-10);
      EXPECT_NEAR(StudentTCdf(-x, dof), 1.0 - StudentTCdf(x, dof), 1e-15);
    }
  }
}

TEST(CiMeanTest, Examples) {
  const std::vector<double> same(6, 0.42);
  const CIReport flat = CiMean(same);
  EXPECT_DOUBLE_EQ(flat.mean, 0.42);
  EXPECT_EQ(flat.half_width, 0.0);

  const std::vector<double> ramp{0.2, 0.4, 0.6, 0.8, 1.0};
  const CIReport r = CiMean(ramp, 0.95);
  EXPECT_NEAR(r.mean, 0.6, 1e-15);
  EXPECT_NEAR(r.half_width, 0.3926, 1e-3);
  EXPECT_NEAR(r.half_width,
              oracle::TQuantileSimpson(4, 0.975) * std::sqrt(0.1) / std::sqrt(5.0),
              1e-6);
  EXPECT_EQ(r.k, 5);
  EXPECT_EQ(r.dof(), 4);

  EXPECT_THROW(CiMean(std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(CiMean(ramp, 1.0), InvalidArgument);
}

TEST(CiMeanTest, CoverageOfGaussianMean) {
  PhiloxEngine rng(2718);
  int covered = 0;
  const int trials = 10000;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<double> xs(5);
    for (double& x : xs) x = 3.0 + 2.0 * rng.NextGaussian();
    const CIReport r = CiMean(xs, 0.95);
    covered += std::abs(r.mean - 3.0) <= r.half_width;
  }
  EXPECT_NEAR(covered / static_cast<double>(trials), 0.95, 0.01);
}

TEST(StatisticModeTest, Examples) {
  // Softmax regression with one feature equal to 1 and zero bias terms:
  // class logits equal theta, so probs are softmax(theta).
  LogisticLoss model(1, 3, 0.0);
  ParameterVector theta(3);
  theta << std::log(0.1), std::log(0.7), std::log(0.2);
  Eigen::VectorXd x(1);
  x << 1.0;
  EXPECT_DOUBLE_EQ(ModelStatistic(theta, model, x, StatisticMode::kLabelAsInteger),
                   1.0);
  EXPECT_NEAR(
      ModelStatistic(theta, model, x, StatisticMode::kModalClassProbability),
      0.7, 1e-15);
  LogisticLoss four(1, 4, 0.0);
  EXPECT_DOUBLE_EQ(ModelStatistic(ParameterVector::Zero(4), four, x,
                                  StatisticMode::kModalClassProbability),
                   0.25);
  EXPECT_EQ(ParseStatisticMode(StatisticModeName(StatisticMode::kLabelAsInteger)),
            StatisticMode::kLabelAsInteger);
  EXPECT_THROW(ParseStatisticMode("entropy"), InvalidArgument);
}

TEST(UqTest, IdenticalModelsHaveZeroWidth) {
  const Dataset test = SynthClassification(30, 2, 2, 1.0, 6);
  LogisticLoss model(2, 2, 0.0);
  ParameterVector theta(2);
  theta << 0.4, -1.2;
  const std::vector<ParameterVector> models(4, theta);
  UqConfig cfg;
  const UqWidths w = UqAverageWidth(models, model, test, cfg);
  EXPECT_EQ(w.average_width, 0.0);
  EXPECT_EQ(w.per_input.size(), 30u);
}

TEST(UqTest, TwoModelWidthMatchesCiMean) {
  // Two binary models on a single input whose modal probabilities differ by
  // d: width = 2 * t(1, 0.975) * (d / sqrt 2) / sqrt 2 = 12.706 d.
  FeatureMatrix f(1, 1);
  f << 1.0;
  const Dataset one(f, {0}, 2);
  LogisticLoss model(1, 2, 0.0);
  ParameterVector a(1), b(1);
  a << std::log(0.7 / 0.3);
  b << std::log(0.9 / 0.1);
  const double d = 0.2;
  UqConfig cfg;
  const UqWidths w = UqAverageWidth(std::vector<ParameterVector>{a, b}, model,
                                    one, cfg);
  EXPECT_NEAR(w.average_width, 2 * TQuantile(1, 0.975) * d / 2.0, 1e-12);
  EXPECT_NEAR(w.average_width, 12.706 * d, 1e-3);
  const std::vector<double> stats{0.7, 0.9};
  EXPECT_NEAR(w.per_input[0], 2 * CiMean(stats).half_width, 1e-12);
}

RunRecord FakeRun(uint64_t seed, int checkpoints, int dim) {
  RunRecord run;
  run.seed = seed;
  PhiloxEngine rng(seed);
  for (int i = 0; i < checkpoints; ++i) {
    ParameterVector p(dim);
    for (int j = 0; j < dim; ++j) p[j] = rng.NextGaussian();
    run.checkpoints.push_back({i + 1, p});
  }
  return run;
}

TEST(UqTest, FromCheckpointsUsesLastK) {
  const Dataset test = SynthClassification(25, 3, 3, 1.0, 7);
  LogisticLoss model(3, 3, 0.0);
  const RunRecord run = FakeRun(1, 10, model.dimension());
  UqConfig cfg;
  cfg.k = 4;
  std::vector<ParameterVector> last4;
  for (int i = 6; i < 10; ++i) last4.push_back(run.checkpoints[i].params);
  EXPECT_EQ(UqFromCheckpoints(run, model, test, cfg).per_input,
            UqAverageWidth(last4, model, test, cfg).per_input);
  cfg.k = 11;
  EXPECT_THROW(UqFromCheckpoints(run, model, test, cfg), InvalidArgument);
  cfg.k = 1;
  EXPECT_THROW(UqFromCheckpoints(run, model, test, cfg), InvalidArgument);
}

TEST(UqTest, FromIndependentRunsDrawsDistinctRuns) {
  const Dataset test = SynthClassification(25, 3, 3, 1.0, 7);
  LogisticLoss model(3, 3, 0.0);
  std::vector<RunRecord> runs;
  for (uint64_t s = 1; s <= 6; ++s) runs.push_back(FakeRun(s, 3, model.dimension()));
  UqConfig cfg;
  cfg.method = UqMethod::kIndependentRuns;
  cfg.k = 6;
  std::vector<ParameterVector> finals;
  for (const RunRecord& r : runs) finals.push_back(r.last().params);
  // With k equal to the pool every run is used once; the interval does not
  // depend on order.
  const UqWidths all = UqFromIndependentRuns(runs, model, test, cfg, 5);
  const UqWidths direct = UqAverageWidth(finals, model, test, cfg);
  for (size_t i = 0; i < all.per_input.size(); ++i) {
    EXPECT_NEAR(all.per_input[i], direct.per_input[i], 1e-12);
  }
  cfg.k = 3;
  EXPECT_EQ(UqFromIndependentRuns(runs, model, test, cfg, 9).per_input,
            UqFromIndependentRuns(runs, model, test, cfg, 9).per_input);
  cfg.k = 7;
  EXPECT_THROW(UqFromIndependentRuns(runs, model, test, cfg, 1), InvalidArgument);
  runs[1].seed = runs[0].seed;
  cfg.k = 3;
  EXPECT_THROW(UqFromIndependentRuns(runs, model, test, cfg, 1), InvalidArgument);
}

TEST(UqTest, NumTestInputsLimitsRows) {
  const Dataset test = SynthClassification(40, 2, 2, 1.0, 3);
  LogisticLoss model(2, 2, 0.0);
  const RunRecord run = FakeRun(4, 5, 2);
  UqConfig cfg;
  cfg.num_test_inputs = 10;
  EXPECT_EQ(UqFromCheckpoints(run, model, test, cfg).per_input.size(), 10u);
}

}  // namespace
}  // namespace dpckpt
