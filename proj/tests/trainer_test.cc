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

#include "dpckpt/trainer.h"

#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

TrainerConfig Theoretical(int64_t steps, double eta, double radius,
                          uint64_t seed) {
  TrainerConfig c;
  c.mode = TrainerMode::kTheoretical;
  c.steps = steps;
  c.eta = StepSchedule::Constant(eta);
  c.projection_radius = radius;
  c.seed = seed;
  return c;
}

TrainerConfig Practical(int64_t steps, double eta, int batch, uint64_t seed) {
  TrainerConfig c;
  c.mode = TrainerMode::kPractical;
  c.steps = steps;
  c.eta = StepSchedule::Constant(eta);
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

const Dataset& OneRowSet() {
  static const Dataset d(FeatureMatrix::Zero(1, 1), {0}, 1);
  return d;
}

void ExpectSameRun(const RunRecord& a, const RunRecord& b) {
  ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
  for (size_t i = 0; i < a.checkpoints.size(); ++i) {
    EXPECT_EQ(a.checkpoints[i].step, b.checkpoints[i].step);
    EXPECT_EQ(a.checkpoints[i].params, b.checkpoints[i].params);
  }
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].train_loss, b.metrics[i].train_loss);
    EXPECT_EQ(std::isnan(a.metrics[i].eval_accuracy),
              std::isnan(b.metrics[i].eval_accuracy));
    if (!std::isnan(a.metrics[i].eval_accuracy)) {
      EXPECT_EQ(a.metrics[i].eval_accuracy, b.metrics[i].eval_accuracy);
    }
  }
  EXPECT_EQ(a.budget, b.budget);
}

TEST(ChooseStepsTest, Ceiling) {
  EXPECT_EQ(ChooseSteps(1000, 0.5), 500);
  EXPECT_EQ(ChooseSteps(1000, 0.0011), 2);
  EXPECT_EQ(ChooseSteps(1, 1.0), 1);
  EXPECT_THROW(ChooseSteps(0, 1.0), InvalidArgument);
}

TEST(ProjectL2Test, Examples) {
  ParameterVector v(2);
  v << 3, 4;
  EXPECT_EQ(ProjectL2(v, 10), v);
  EXPECT_EQ(ProjectL2(v, 5), v);
  const ParameterVector unit = ProjectL2(v, 1);
  EXPECT_NEAR(unit[0], 0.6, 1e-15);
  EXPECT_NEAR(unit[1], 0.8, 1e-15);
  EXPECT_THROW(ProjectL2(v, 0), InvalidArgument);
}

TEST(ProjectL2Test, IdempotentAndInsideBall) {
  PhiloxEngine rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterVector v(5);
    for (int j = 0; j < 5; ++j) v[j] = 3.0 * rng.NextGaussian();
    const double r = 0.1 + 4.0 * rng.NextUniform();
    const ParameterVector once = ProjectL2(v, r);
    EXPECT_LE(once.norm(), r + 1e-12);
    EXPECT_EQ(ProjectL2(once, r), once);
  }
}

TEST(ClipTest, LongGradientHasNormExactlyClip) {
  ParameterVector g(2);
  g << 6, 8;
  EXPECT_NEAR(ClipToNorm(g, 1.0).norm(), 1.0, 1e-15);
  EXPECT_EQ(ClipToNorm(g, 100.0), g);
}

TEST(StepScheduleTest, Kinds) {
  EXPECT_EQ(StepSchedule::Constant(0.3).At(7), 0.3);
  EXPECT_DOUBLE_EQ(StepSchedule::InverseSqrt(2.0).At(4), 1.0);
  EXPECT_THROW(StepSchedule::TheoremDefault().At(1), PreconditionError);
  EXPECT_DOUBLE_EQ(TheoremStepScale(1.0, 1.0, 0.5, 4), 2.0 / 2.0);
}

TEST(DefaultCheckpointEveryTest, Cadence) {
  EXPECT_EQ(DefaultCheckpointEvery(1), 1);
  EXPECT_EQ(DefaultCheckpointEvery(2048), 1);
  EXPECT_EQ(DefaultCheckpointEvery(2049), 2);
  EXPECT_EQ(DefaultCheckpointEvery(10000), 5);
}

TEST(DpSgdTheoreticalTest, NoiselessQuadraticConverges) {
  QuadraticLoss quad(ParameterVector::Zero(3));
  // Start from the boundary by using a shifted center and measuring distance.
  ParameterVector center(3);
  center << 0.3, -0.4, 0.5;
  QuadraticLoss shifted(center);
  const RunRecord run =
      DpSgdTheoretical(shifted, OneRowSet(), Theoretical(100, 0.5, 1.0, 1),
                       std::numeric_limits<double>::infinity());
  EXPECT_LT((run.last().params - center).norm(), 1e-8);
  EXPECT_EQ(run.noise_variance, 0.0);
  EXPECT_TRUE(std::isinf(run.budget.rho));
  EXPECT_EQ(run.metrics.size(), 100u);
  (void)quad;
}

TEST(DpSgdTheoreticalTest, DeterministicGivenSeed) {
  const Dataset d = SynthClassification(200, 4, 2, 1.0, 3);
  LogisticLoss model(4, 2, 0.01);
  TrainerConfig c = Theoretical(100, 0.1, 2.0, 99);
  c.eta = StepSchedule::TheoremDefault();
  const RunRecord a = DpSgdTheoretical(model, d, c, 0.5, &d);
  const RunRecord b = DpSgdTheoretical(model, d, c, 0.5, &d);
  ExpectSameRun(a, b);
  c.seed = 100;
  const RunRecord other = DpSgdTheoretical(model, d, c, 0.5, &d);
  EXPECT_NE(a.last().params, other.last().params);
}

TEST(DpSgdTheoreticalTest, LedgerAndInvariants) {
  const Dataset d = SynthClassification(300, 5, 2, 1.0, 5);
  LogisticLoss model(5, 2, 0.05);
  TrainerConfig c = Theoretical(150, 0.1, 1.5, 7);
  c.eta = StepSchedule::TheoremDefault();
  c.checkpoint_every = 7;
  const RunRecord run = DpSgdTheoretical(model, d, c, 0.5);
  EXPECT_EQ(run.budget.rho, 150 * run.rho_per_step);
  EXPECT_NEAR(run.budget.rho, 0.5, 1e-12);
  EXPECT_EQ(run.budget.epsilon, ZcdpToEpsilon(run.budget.rho, 1e-5));
  EXPECT_DOUBLE_EQ(run.noise_variance,
                   CalibrateTheoretical(run.lipschitz, 150, 300, 0.5)
                       .variance_per_step);
  EXPECT_EQ(run.metrics.size(), 150u);
  int64_t prev = 0;
  for (const Checkpoint& ck : run.checkpoints) {
    EXPECT_GT(ck.step, prev);
    EXPECT_TRUE(ck.step % 7 == 0 || ck.step == 150);
    EXPECT_LE(ck.params.norm(), 1.5 + 1e-12);
    prev = ck.step;
  }
  EXPECT_EQ(run.last().step, 150);
  EXPECT_EQ(run.checkpoints.size(), 150u / 7 + 1);
}

TEST(DpSgdTheoreticalTest, NoiselessLossMonotoneWhenStepBelowInverseSmoothness) {
  const Dataset d = SynthClassification(200, 3, 2, 1.5, 8);
  LogisticLoss model(3, 2, 0.1);
  const double eta = 1.0 / model.Smoothness(d);
  const RunRecord run =
      DpSgdTheoretical(model, d, Theoretical(300, eta, 5.0, 1),
                       std::numeric_limits<double>::infinity());
  for (size_t i = 1; i < run.metrics.size(); ++i) {
    EXPECT_LE(run.metrics[i].train_loss, run.metrics[i - 1].train_loss + 1e-15);
  }
}

TEST(DpSgdTheoreticalTest, DivergenceCarriesStep) {
  QuadraticLoss quad(ParameterVector::Zero(1));
  TrainerConfig c = Theoretical(50, 1e200, 1e300, 1);
  c.noise_variance_override = 1.0;
  try {
    DpSgdTheoretical(quad, OneRowSet(), c, 1.0);
    FAIL() << "expected divergence";
  } catch (const NumericDivergence& e) {
    EXPECT_GE(e.step(), 1);
    EXPECT_LE(e.step(), 50);
  }
}

TEST(DpSgdTheoreticalTest, RejectsBadConfig) {
  QuadraticLoss quad(ParameterVector::Zero(1));
  TrainerConfig c = Theoretical(10, 0.1, 1.0, 1);
  EXPECT_THROW(DpSgdTheoretical(quad, OneRowSet(), c, 0.0), InvalidArgument);
  c.checkpoint_every = 11;
  EXPECT_THROW(DpSgdTheoretical(quad, OneRowSet(), c, 1.0), InvalidArgument);
  c = Theoretical(0, 0.1, 1.0, 1);
  EXPECT_THROW(DpSgdTheoretical(quad, OneRowSet(), c, 1.0), InvalidArgument);
  c = Theoretical(10, 0.1, std::numeric_limits<double>::infinity(), 1);
  EXPECT_THROW(DpSgdTheoretical(quad, OneRowSet(), c, 1.0), InvalidArgument);
}

// Scalar recursion theta_j <- theta_j - eta (theta_j + sigma xi_{t,j}) driven
// by the same counter noise.
std::vector<double> ScalarAr1(int p, int64_t steps, double eta, double sigma,
                              uint64_t seed) {
  std::vector<double> theta(p, 0.0), sq;
  for (int64_t t = 1; t <= steps; ++t) {
    double s = 0.0;
    for (int j = 0; j < p; ++j) {
      theta[j] -= eta * (theta[j] + sigma * TrainerNoise(seed, t, j));
      s += theta[j] * theta[j];
    }
    sq.push_back(s);
  }
  return sq;
}

TEST(DpSgdTheoreticalTest, NoisyQuadraticMatchesScalarRecursion) {
  const int p = 2;
  const double eta = 0.1, var = 0.1;
  QuadraticLoss quad(ParameterVector::Zero(p));
  TrainerConfig c = Theoretical(10000, eta, 1e6, 2024);
  c.noise_variance_override = var;
  c.checkpoint_every = 1;
  const RunRecord run = DpSgdTheoretical(quad, OneRowSet(), c, 1.0);
  const std::vector<double> oracle =
      ScalarAr1(p, 10000, eta, std::sqrt(var), 2024);
  double run_avg = 0.0, oracle_avg = 0.0;
  for (int64_t t = 5000; t < 10000; ++t) {
    const double sq = run.checkpoints[t].params.squaredNorm();
    EXPECT_NEAR(sq, oracle[t], 1e-12);
    run_avg += sq;
    oracle_avg += oracle[t];
  }
  run_avg /= 5000;
  oracle_avg /= 5000;
  // Stationary second moment of the AR(1) recursion.
  const double closed = p * eta * eta * var / (1.0 - (1.0 - eta) * (1.0 - eta));
  EXPECT_NEAR(closed, 2.0 * 0.001 / 0.19, 1e-15);
  EXPECT_NEAR(run_avg / closed, 1.0, 0.05);
  EXPECT_NEAR(oracle_avg, run_avg, 1e-12);
}

TEST(DpSgdPracticalTest, NoNoiseHugeClipIsPlainMinibatchSgd) {
  const Dataset d = SynthClassification(150, 3, 3, 1.0, 6);
  LogisticLoss model(3, 3, 0.01);
  TrainerConfig c = Practical(60, 0.2, 16, 31);
  c.clip_norm = 1e12;
  const RunRecord run = DpSgdPractical(model, d, c, 0.0);
  EXPECT_TRUE(std::isinf(run.budget.rho));

  // Independent plain minibatch SGD over the same batches and init.
  ParameterVector theta = PracticalInit(31, model.dimension());
  for (int64_t t = 1; t <= 60; ++t) {
    ParameterVector sum = ParameterVector::Zero(model.dimension());
    for (int i : SampleBatchIndices(31, t, d.n(), 16)) {
      sum += model.ExampleGradient(theta, d.x(i), d.label(i));
    }
    theta -= 0.2 * (sum / 16.0);
    EXPECT_EQ(run.checkpoints[t - 1].params, theta) << "step " << t;
  }
}

TEST(DpSgdPracticalTest, LedgerAndDeterminism) {
  const Dataset d = SynthClassification(200, 3, 2, 1.0, 9);
  LogisticLoss model(3, 2, 0.0);
  TrainerConfig c = Practical(100, 0.1, 20, 5);
  const RunRecord a = DpSgdPractical(model, d, c, 10.0, &d);
  const RunRecord b = DpSgdPractical(model, d, c, 10.0, &d);
  ExpectSameRun(a, b);
  EXPECT_DOUBLE_EQ(a.rho_per_step, 0.005);
  EXPECT_EQ(a.budget.rho, 100 * a.rho_per_step);
  EXPECT_NEAR(a.budget.rho, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(a.noise_variance, (10.0 / 20) * (10.0 / 20));
}

TEST(DpSgdPracticalTest, InitIsSmallUniform) {
  const ParameterVector init = PracticalInit(3, 1000);
  EXPECT_LE(init.maxCoeff(), 0.01);
  EXPECT_GE(init.minCoeff(), -0.01);
  EXPECT_NEAR(init.mean(), 0.0, 0.002);
}

TEST(DpSgdPracticalTest, BatchIndicesDistinctAndInRange) {
  for (int64_t t = 1; t <= 20; ++t) {
    std::vector<int> idx = SampleBatchIndices(1, t, 50, 20);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    EXPECT_GE(idx.front(), 0);
    EXPECT_LT(idx.back(), 50);
  }
  EXPECT_THROW(SampleBatchIndices(1, 1, 5, 6), InvalidArgument);
}

TEST(DpSgdPracticalTest, DiurnalFirstStepUsesSourceA) {
  // Source A examples all sit at x = +1 with label 1, source B at x = -1 with
  // label 0. With no noise and no l2 the first update direction is the
  // gradient on source A only.
  FeatureMatrix fa(4, 1), fb(4, 1);
  fa.setConstant(1.0);
  fb.setConstant(-1.0);
  const Dataset a(fa, {1, 1, 1, 1}, 2), b(fb, {0, 0, 0, 0}, 2);
  LogisticLoss model(1, 2, 0.0);
  TrainerConfig c = Practical(1, 1.0, 8, 2);
  c.diurnal = std::make_shared<DiurnalSchedule>(10, a, b);
  c.clip_norm = 1e9;
  const RunRecord run = DpSgdPractical(model, a, c, 0.0);
  const ParameterVector init = PracticalInit(2, 1);
  const ParameterVector expected =
      init - model.ExampleGradient(init, a.x(0), a.label(0));
  EXPECT_NEAR(run.last().params[0], expected[0], 1e-15);
}

TEST(DpSgdPracticalTest, RejectsBadConfig) {
  const Dataset d = SynthClassification(10, 2, 2, 1.0, 1);
  LogisticLoss model(2, 2, 0.0);
  EXPECT_THROW(DpSgdPractical(model, d, Practical(5, 0.1, 11, 1), 1.0),
               InvalidArgument);
  TrainerConfig c = Practical(5, 0.1, 5, 1);
  c.clip_norm = 0;
  EXPECT_THROW(DpSgdPractical(model, d, c, 1.0), InvalidArgument);
  EXPECT_THROW(DpSgdPractical(model, d, Practical(5, 0.1, 5, 1), -1.0),
               InvalidArgument);
  EXPECT_THROW(DpSgdPractical(model, d, Theoretical(5, 0.1, 1, 1), 1.0),
               InvalidArgument);
}

TEST(ExcessRiskTest, QuadraticAndPrecondition) {
  auto quad = std::make_shared<QuadraticLoss>(ParameterVector::Zero(2));
  auto data = std::make_shared<Dataset>(OneRowSet());
  ExcessRiskEvaluator eval(quad, data, 3.0);
  ParameterVector theta(2);
  theta << 1, 0;
  EXPECT_THROW(eval.ExcessRisk(theta), PreconditionError);
  EXPECT_THROW(eval.minimizer(), PreconditionError);
  eval.ComputeMinimizer();
  EXPECT_NEAR(eval.ExcessRisk(theta), 0.5, 1e-12);
  EXPECT_NEAR(eval.ExcessRisk(eval.minimizer()), 0.0, 1e-9);
}

TEST(ExcessRiskTest, LogisticMinimizerMatchesLongDecayingRun) {
  auto data =
      std::make_shared<Dataset>(SynthClassification(300, 4, 2, 1.0, 12));
  auto model = std::make_shared<LogisticLoss>(4, 2, 0.1);
  const double radius = 1.0;
  ExcessRiskEvaluator eval(model, data, radius);
  eval.ComputeMinimizer();

  // Oracle: 1e5 steps of projected GD with eta_t = 1 / (m t), m = l2.
  ParameterVector theta = ParameterVector::Zero(4);
  const double m = model->StrongConvexity();
  for (int64_t t = 1; t <= 100000; ++t) {
    theta = ProjectL2(theta - (1.0 / (m * t)) * GradFull(*model, theta, *data),
                      radius);
  }
  EXPECT_NEAR(LossFull(*model, theta, *data), eval.min_loss(), 1e-6);
  EXPECT_GE(eval.ExcessRisk(theta), -1e-9);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterVector v = PracticalInit(trial, 4) * 100.0;
    EXPECT_GE(eval.ExcessRisk(ProjectL2(v, radius)), -1e-9);
  }
}

}  // namespace
}  // namespace dpckpt
