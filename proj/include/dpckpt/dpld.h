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

// Langevin-dynamics simulation for the checkpoint variance estimator.
//
// The continuous-time limit of unconstrained DP-SGD is the SDE
//   d theta = -grad L(theta) dt + sigma sqrt(2) dW.
// For the unit quadratic 0.5 ||theta - c||^2 this is an Ornstein-Uhlenbeck
// process with Gaussian transition
//   theta_{t+s} | theta_t ~ N(c + e^{-s} (theta_t - c), sigma^2 (1 - e^{-2s}) I)
// which is sampled exactly. Other smooth strongly convex losses fall back to
// Euler-Maruyama with a small step.
//
// The experiment: sample one trajectory at t_1, t_1 + gap, ..., compute the
// sample variance S of a bounded statistic f over those checkpoints, repeat,
// and compare E[S] with V = Var f(theta) at the final checkpoint.

#ifndef DPCKPT_DPLD_H_
#define DPCKPT_DPLD_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>

#include "dpckpt/model.h"
#include "dpckpt/rng.h"

namespace dpckpt {

struct LdConfig {
  double sigma = 1.0;
  // Euler-Maruyama step; unused by the exact quadratic sampler.
  double step_size = 1e-3;
  ParameterVector theta_start;
  std::shared_ptr<const LossModel> model;
  // Required for non-quadratic models.
  std::shared_ptr<const Dataset> data;
  // Point statistics are measured against (the optimum). Defaults to the
  // quadratic center, or the origin for other models.
  ParameterVector reference;
  // Annotation constant for the burn-in bound.
  double bound_constant = 4.0;
  double bound_delta = 0.01;
};

struct CheckpointTimes {
  double t1 = 1.0;
  double gap = 1.0;
  int k = 5;

  double At(int i) const { return t1 + i * gap; }  // i = 0..k-1
  void Validate() const;
};

enum class LdStatistic {
  kClampedFirstCoordinate,  // clamp(theta_1 - ref_1, -1, 1)
  kSignFirstCoordinate,     // sign(theta_1 - ref_1)
  kClampedNormMinusSqrtP,   // clamp(||theta - ref|| - sqrt(p), -1, 1)
};

std::string_view LdStatisticName(LdStatistic f);
LdStatistic ParseLdStatistic(std::string_view name);

double EvaluateStatistic(LdStatistic f, const ParameterVector& theta,
                         const ParameterVector& reference);

// One Euler-Maruyama step: theta - eta grad L + N(0, 2 eta sigma^2 I).
ParameterVector EmStep(const ParameterVector& theta, const LossModel& model,
                       const Dataset* data, double eta, double sigma,
                       PhiloxEngine& rng);

// Exact OU transition over elapsed time s for the unit quadratic at `center`.
ParameterVector OuExactSample(const ParameterVector& center, double sigma,
                              const ParameterVector& theta_t, double elapsed,
                              PhiloxEngine& rng);

struct MonteCarloEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

// Var f(theta_inf) from exact N(center, sigma^2 I) draws.
MonteCarloEstimate StationaryOracleV(const ParameterVector& center,
                                     double sigma, LdStatistic f,
                                     int64_t samples, uint64_t seed);

// (k-1)-denominator sample variance.
double SampleVariance(std::span<const double> values);

struct VarianceBiasReport {
  CheckpointTimes times;
  LdStatistic statistic = LdStatistic::kClampedFirstCoordinate;
  int64_t trials = 0;
  double mean_s = 0.0;
  double mean_s_se = 0.0;
  double oracle_v = 0.0;
  double oracle_se = 0.0;
  double abs_bias = 0.0;
  double burn_in_bound = 0.0;

  // Standard error of mean_s - oracle_v.
  double bias_se() const;
};

VarianceBiasReport VarianceBiasExperiment(const LdConfig& config,
                                          const CheckpointTimes& times,
                                          LdStatistic f, int64_t trials,
                                          uint64_t seed,
                                          int64_t oracle_samples = 1000000);

// gamma = 1/(2M) + ln(c M (p + ln(1/Delta) + ||theta_0 - theta*||^2))
//         + c ln(1/Delta).
double BurnInGamma(double smoothness, int p, double dist0_sq, double delta,
                   double c);

// D_alpha(N(mu1, s2 I) || N(mu2, s2 I)) = alpha ||mu1 - mu2||^2 / (2 s2).
double RenyiGaussiansSharedCov(const Eigen::VectorXd& mu1,
                               const Eigen::VectorXd& mu2, double variance,
                               double alpha);

// sqrt(e^{D_2} - 1): bound on |E_P g - E_Q g| for g into [-1, 1].
double ExpectationGapBound(double d2);

struct BoundCheck {
  double empirical = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;

  bool Holds(double slack = 3.0) const {
    return empirical <= bound + slack * standard_error;
  }
};

// |E g(X) - E g(Y)| for X ~ N(0, s2), Y ~ N(mean_gap, s2), g = clamp to
// [-1, 1], against ExpectationGapBound of the closed-form D_2.
BoundCheck CheckExpectationGap(double mean_gap, double variance,
                               int64_t samples, uint64_t seed);

// Pr[||theta_inf - theta*|| > sqrt(p) + x] under N(theta*, I) against
// exp(-x^2 / 2).
BoundCheck SubgaussianTailCheck(int p, double x, int64_t samples,
                                uint64_t seed);

}  // namespace dpckpt

#endif  // DPCKPT_DPLD_H_
