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

// Prediction uncertainty from k models: Student-t confidence intervals over a
// per-model statistic, averaged across test inputs. The k models come either
// from k independent training runs or from the last k checkpoints of one.

#ifndef DPCKPT_UNCERTAINTY_H_
#define DPCKPT_UNCERTAINTY_H_

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dpckpt/model.h"
#include "dpckpt/trainer.h"

namespace dpckpt {

// Regularized incomplete beta I_x(a, b) by continued fraction. Both x and
// 1 - x are passed so callers near x = 1 keep full precision.
double RegularizedIncompleteBeta(double a, double b, double x,
                                 double one_minus_x);

double StudentTCdf(double x, int64_t dof);

// Quantile of Student's t by bisection on StudentTCdf, accurate to 1e-8 in
// probability. Antisymmetric: TQuantile(d, p) == -TQuantile(d, 1 - p).
double TQuantile(int64_t dof, double p);

struct CIReport {
  double mean = 0.0;
  double half_width = 0.0;
  int k = 0;
  double level = 0.95;
  int64_t dof() const { return k - 1; }
};

// mean +/- t_{k-1, 1-(1-level)/2} * s / sqrt(k), s the (k-1)-denominator
// sample standard deviation.
CIReport CiMean(std::span<const double> samples, double level = 0.95);

enum class StatisticMode { kLabelAsInteger, kModalClassProbability };

std::string_view StatisticModeName(StatisticMode mode);
StatisticMode ParseStatisticMode(std::string_view name);

// kLabelAsInteger: the predicted class index as a real.
// kModalClassProbability: the probability of the predicted class.
double ModelStatistic(const ParameterVector& theta, const LossModel& model,
                      const FeatureRow& x, StatisticMode mode);

enum class UqMethod { kIndependentRuns, kLastKCheckpoints };

std::string_view UqMethodName(UqMethod method);

struct UqConfig {
  UqMethod method = UqMethod::kLastKCheckpoints;
  int k = 5;
  double level = 0.95;
  StatisticMode statistic = StatisticMode::kModalClassProbability;
  // Uses the first num_test_inputs rows of the test set; 0 means all.
  int num_test_inputs = 0;
};

struct UqWidths {
  double average_width = 0.0;
  std::vector<double> per_input;  // full interval widths, 2 * half_width
};

// Average over test inputs of the CI width of the k models' statistics.
UqWidths UqAverageWidth(std::span<const ParameterVector> models,
                        const LossModel& model, const Dataset& test,
                        const UqConfig& config);

// Width from the last k checkpoints of a single run.
UqWidths UqFromCheckpoints(const RunRecord& run, const LossModel& model,
                           const Dataset& test, const UqConfig& config);

// Width from the final checkpoints of k runs drawn without replacement from
// `runs` using `selection_seed`. Runs must have distinct seeds.
UqWidths UqFromIndependentRuns(std::span<const RunRecord> runs,
                               const LossModel& model, const Dataset& test,
                               const UqConfig& config,
                               uint64_t selection_seed);

}  // namespace dpckpt

#endif  // DPCKPT_UNCERTAINTY_H_
