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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "dpckpt/errors.h"
#include "dpckpt/rng.h"

namespace dpckpt {
namespace {

constexpr int kMaxFractionTerms = 100000;
constexpr double kFractionEps = 1e-16;
constexpr double kTiny = 1e-300;

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double BetaContinuedFraction(double a, double b, double x) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxFractionTerms; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kFractionEps) return h;
  }
  throw NumericOverflow("incomplete beta continued fraction did not converge");
}

}  // namespace

double RegularizedIncompleteBeta(double a, double b, double x,
                                 double one_minus_x) {
  if (!(a > 0 && b > 0)) throw InvalidArgument("beta parameters must be positive");
  if (x <= 0) return 0.0;
  if (one_minus_x <= 0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) -
                           std::lgamma(b) + a * std::log(x) +
                           b * std::log(one_minus_x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * BetaContinuedFraction(a, b, x) / a;
  }
  return 1.0 - front * BetaContinuedFraction(b, a, one_minus_x) / b;
}

double StudentTCdf(double x, int64_t dof) {
  if (dof < 1) throw InvalidArgument("degrees of freedom must be >= 1");
  if (x == 0.0) return 0.5;
  const double nu = static_cast<double>(dof);
  const double x2 = x * x;
  const double tail = 0.5 * RegularizedIncompleteBeta(
                                nu / 2.0, 0.5, nu / (nu + x2), x2 / (nu + x2));
  return x > 0 ? 1.0 - tail : tail;
}

double TQuantile(int64_t dof, double p) {
  if (dof < 1) throw InvalidArgument("degrees of freedom must be >= 1");
  if (!(p > 0 && p < 1)) throw InvalidArgument("p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -TQuantile(dof, 1.0 - p);
  double lo = 0.0, hi = 1.0;
  while (StudentTCdf(hi, dof) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw NumericOverflow("t quantile bracket overflow");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (StudentTCdf(mid, dof) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-13 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

CIReport CiMean(std::span<const double> samples, double level) {
  const int k = static_cast<int>(samples.size());
  if (k < 2) throw InvalidArgument("confidence interval needs >= 2 samples");
  if (!(level > 0 && level < 1)) throw InvalidArgument("level must lie in (0, 1)");
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / k;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / (k - 1));
  CIReport r;
  r.mean = mean;
  r.k = k;
  r.level = level;
  r.half_width =
      sd == 0.0 ? 0.0
                : TQuantile(k - 1, 1.0 - (1.0 - level) / 2.0) * sd / std::sqrt(k);
  return r;
}

std::string_view StatisticModeName(StatisticMode mode) {
  return mode == StatisticMode::kLabelAsInteger ? "label_as_integer"
                                                : "modal_class_probability";
}

StatisticMode ParseStatisticMode(std::string_view name) {
  if (name == "label_as_integer") return StatisticMode::kLabelAsInteger;
  if (name == "modal_class_probability") {
    return StatisticMode::kModalClassProbability;
  }
  throw InvalidArgument("unknown statistic mode '" + std::string(name) + "'");
}

std::string_view UqMethodName(UqMethod method) {
  return method == UqMethod::kIndependentRuns ? "independent_runs"
                                              : "last_k_checkpoints";
}

double ModelStatistic(const ParameterVector& theta, const LossModel& model,
                      const FeatureRow& x, StatisticMode mode) {
  const PredictionVector pred = Predict(model, theta, x);
  const int label = pred.Argmax();
  return mode == StatisticMode::kLabelAsInteger ? static_cast<double>(label)
                                                : pred.probs[label];
}

UqWidths UqAverageWidth(std::span<const ParameterVector> models,
                        const LossModel& model, const Dataset& test,
                        const UqConfig& config) {
  if (models.size() < 2) throw InvalidArgument("uncertainty needs k >= 2 models");
  const int inputs = config.num_test_inputs > 0
                         ? std::min(config.num_test_inputs, test.n())
                         : test.n();
  UqWidths out;
  out.per_input.reserve(inputs);
  std::vector<double> stats(models.size());
  double total = 0.0;
  for (int i = 0; i < inputs; ++i) {
    for (size_t m = 0; m < models.size(); ++m) {
      stats[m] = ModelStatistic(models[m], model, test.x(i), config.statistic);
    }
    const double width = 2.0 * CiMean(stats, config.level).half_width;
    out.per_input.push_back(width);
    total += width;
  }
  out.average_width = total / inputs;
  return out;
}

UqWidths UqFromCheckpoints(const RunRecord& run, const LossModel& model,
                           const Dataset& test, const UqConfig& config) {
  if (config.k < 2) throw InvalidArgument("uncertainty needs k >= 2");
  if (static_cast<int>(run.checkpoints.size()) < config.k) {
    throw InvalidArgument("run has " + std::to_string(run.checkpoints.size()) +
                          " checkpoints, need " + std::to_string(config.k));
  }
  std::vector<ParameterVector> models;
  for (size_t i = run.checkpoints.size() - config.k; i < run.checkpoints.size();
       ++i) {
    models.push_back(run.checkpoints[i].params);
  }
  return UqAverageWidth(models, model, test, config);
}

UqWidths UqFromIndependentRuns(std::span<const RunRecord> runs,
                               const LossModel& model, const Dataset& test,
                               const UqConfig& config,
                               uint64_t selection_seed) {
  if (config.k < 2) throw InvalidArgument("uncertainty needs k >= 2");
  if (static_cast<int>(runs.size()) < config.k) {
    throw InvalidArgument("need " + std::to_string(config.k) + " runs, have " +
                          std::to_string(runs.size()));
  }
  std::set<uint64_t> seeds;
  for (const RunRecord& r : runs) {
    if (!seeds.insert(r.seed).second) {
      throw InvalidArgument("independent runs must have distinct seeds");
    }
  }
  std::vector<int> pool(runs.size());
  std::iota(pool.begin(), pool.end(), 0);
  PhiloxEngine rng(selection_seed, /*stream=*/0x0UL);
  std::vector<ParameterVector> models;
  for (int i = 0; i < config.k; ++i) {
    const int j = i + static_cast<int>(rng.NextBelow(pool.size() - i));
    std::swap(pool[i], pool[j]);
    models.push_back(runs[pool[i]].last().params);
  }
  return UqAverageWidth(models, model, test, config);
}

}  // namespace dpckpt
