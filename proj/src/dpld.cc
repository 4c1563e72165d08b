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

#include "dpckpt/dpld.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

// Trial streams for the experiment; oracle chains start at kOracleStream.
constexpr uint64_t kOracleStream = uint64_t{1} << 48;

// Running mean / variance with enough information for the SE of both.
struct Moments {
  double n = 0, sum = 0, sum2 = 0, sum3 = 0, sum4 = 0;

  void Add(double v) {
    n += 1;
    sum += v;
    const double v2 = v * v;
    sum2 += v2;
    sum3 += v2 * v;
    sum4 += v2 * v2;
  }
  double Mean() const { return sum / n; }
  double Variance() const {  // unbiased
    const double m = Mean();
    return std::max(0.0, (sum2 - n * m * m) / (n - 1));
  }
  double MeanSe() const { return std::sqrt(Variance() / n); }
  // Large-sample SE of the sample variance: sqrt((mu4 - s^4) / n).
  double VarianceSe() const {
    const double m = Mean();
    const double mu2 = sum2 / n - m * m;
    const double mu4 = sum4 / n - 4 * m * sum3 / n + 6 * m * m * sum2 / n -
                       3 * m * m * m * m;
    return std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n);
  }
};

const QuadraticLoss* AsQuadratic(const LossModel* model) {
  return dynamic_cast<const QuadraticLoss*>(model);
}

double Clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

void CheckpointTimes::Validate() const {
  if (!(t1 > 0)) throw InvalidArgument("t1 must be positive");
  if (!(gap > 0)) throw InvalidArgument("checkpoint gap must be positive");
  if (k < 2) throw InvalidArgument("need k >= 2 checkpoints");
}

std::string_view LdStatisticName(LdStatistic f) {
  switch (f) {
    case LdStatistic::kClampedFirstCoordinate: return "clamped_first";
    case LdStatistic::kSignFirstCoordinate: return "sign_first";
    case LdStatistic::kClampedNormMinusSqrtP: return "clamped_norm";
  }
  return "unknown";
}

LdStatistic ParseLdStatistic(std::string_view name) {
  for (LdStatistic f : {LdStatistic::kClampedFirstCoordinate,
                        LdStatistic::kSignFirstCoordinate,
                        LdStatistic::kClampedNormMinusSqrtP}) {
    if (LdStatisticName(f) == name) return f;
  }
  throw InvalidArgument("unknown statistic '" + std::string(name) + "'");
}

double EvaluateStatistic(LdStatistic f, const ParameterVector& theta,
                         const ParameterVector& reference) {
  switch (f) {
    case LdStatistic::kClampedFirstCoordinate:
      return Clamp1(theta[0] - reference[0]);
    case LdStatistic::kSignFirstCoordinate: {
      const double d = theta[0] - reference[0];
      return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
    case LdStatistic::kClampedNormMinusSqrtP:
      return Clamp1((theta - reference).norm() -
                    std::sqrt(static_cast<double>(theta.size())));
  }
  return 0.0;
}

ParameterVector EmStep(const ParameterVector& theta, const LossModel& model,
                       const Dataset* data, double eta, double sigma,
                       PhiloxEngine& rng) {
  if (!(eta >= 0)) throw InvalidArgument("step size must be nonnegative");
  if (!theta.allFinite()) throw NumericDivergence("non-finite Langevin state", 0);
  ParameterVector grad;
  if (data != nullptr) {
    grad = GradFull(model, theta, *data);
  } else if (const QuadraticLoss* q = AsQuadratic(&model)) {
    grad = theta - q->center();
  } else {
    throw InvalidArgument("non-quadratic Langevin dynamics needs data");
  }
  ParameterVector next = theta - eta * grad;
  const double noise_std = std::sqrt(2.0 * eta) * sigma;
  if (noise_std > 0) {
    for (Eigen::Index j = 0; j < next.size(); ++j) {
      next[j] += noise_std * rng.NextGaussian();
    }
  }
  if (!next.allFinite()) throw NumericDivergence("non-finite Langevin state", 0);
  return next;
}

ParameterVector OuExactSample(const ParameterVector& center, double sigma,
                              const ParameterVector& theta_t, double elapsed,
                              PhiloxEngine& rng) {
  if (!(elapsed >= 0)) throw InvalidArgument("elapsed time must be nonnegative");
  if (elapsed == 0) return theta_t;
  const double decay = std::exp(-elapsed);
  const double sd = sigma * std::sqrt(-std::expm1(-2.0 * elapsed));
  ParameterVector out = center + decay * (theta_t - center);
  for (Eigen::Index j = 0; j < out.size(); ++j) out[j] += sd * rng.NextGaussian();
  return out;
}

MonteCarloEstimate StationaryOracleV(const ParameterVector& center,
                                     double sigma, LdStatistic f,
                                     int64_t samples, uint64_t seed) {
  if (samples < 2) throw InvalidArgument("oracle needs >= 2 samples");
  PhiloxEngine rng(seed, kOracleStream);
  Moments m;
  ParameterVector theta(center.size());
  for (int64_t i = 0; i < samples; ++i) {
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      theta[j] = center[j] + sigma * rng.NextGaussian();
    }
    m.Add(EvaluateStatistic(f, theta, center));
  }
  return MonteCarloEstimate{m.Variance(), m.VarianceSe()};
}

double SampleVariance(std::span<const double> values) {
  const size_t k = values.size();
  if (k < 2) throw InvalidArgument("sample variance needs >= 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(k);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(k - 1);
}

double VarianceBiasReport::bias_se() const {
  return std::sqrt(mean_s_se * mean_s_se + oracle_se * oracle_se);
}

VarianceBiasReport VarianceBiasExperiment(const LdConfig& config,
                                          const CheckpointTimes& times,
                                          LdStatistic f, int64_t trials,
                                          uint64_t seed,
                                          int64_t oracle_samples) {
  times.Validate();
  if (trials < 100) throw InvalidArgument("need >= 100 trials");
  if (config.model == nullptr) throw InvalidArgument("Langevin config needs a model");
  if (!(config.sigma > 0)) throw InvalidArgument("sigma must be positive");
  const LossModel& model = *config.model;
  const int p = model.dimension();
  if (config.theta_start.size() != p) {
    throw InvalidArgument("theta_start dimension does not match the model");
  }
  const QuadraticLoss* quad = AsQuadratic(&model);
  const ParameterVector reference =
      config.reference.size() == p
          ? config.reference
          : (quad != nullptr ? quad->center() : ParameterVector::Zero(p));

  // Strong convexity is normalized to 1 by measuring time in units of 1/m.
  const double m = model.StrongConvexity();
  if (quad == nullptr && !(m > 0)) {
    throw InvalidArgument("Langevin fallback needs a strongly convex loss");
  }
  const double time_scale = quad != nullptr ? 1.0 : 1.0 / m;
  const Dataset* data = config.data.get();
  if (quad == nullptr && data == nullptr) {
    throw InvalidArgument("Langevin fallback needs data");
  }

  auto advance = [&](const ParameterVector& theta, double elapsed,
                     PhiloxEngine& rng) -> ParameterVector {
    if (quad != nullptr) {
      return OuExactSample(quad->center(), config.sigma, theta, elapsed, rng);
    }
    if (!(config.step_size > 0)) throw InvalidArgument("step size must be positive");
    const double real_time = elapsed * time_scale;
    const auto steps =
        static_cast<int64_t>(std::llround(real_time / config.step_size));
    ParameterVector cur = theta;
    for (int64_t s = 0; s < steps; ++s) {
      cur = EmStep(cur, model, data, config.step_size, config.sigma, rng);
    }
    return cur;
  };

  VarianceBiasReport report;
  report.times = times;
  report.statistic = f;
  report.trials = trials;

  Moments s_moments;
  std::vector<double> values(times.k);
  for (int64_t trial = 0; trial < trials; ++trial) {
    PhiloxEngine rng(seed, static_cast<uint64_t>(trial));
    ParameterVector theta = advance(config.theta_start, times.t1, rng);
    values[0] = EvaluateStatistic(f, theta, reference);
    for (int i = 1; i < times.k; ++i) {
      theta = advance(theta, times.gap, rng);
      values[i] = EvaluateStatistic(f, theta, reference);
    }
    s_moments.Add(SampleVariance(values));
  }
  report.mean_s = s_moments.Mean();
  report.mean_s_se = s_moments.MeanSe();

  MonteCarloEstimate oracle;
  if (quad != nullptr) {
    oracle = StationaryOracleV(quad->center(), config.sigma, f, oracle_samples,
                               seed);
  } else {
    // No exact stationary sampler: V is the variance of f at the final
    // checkpoint time across independent chains.
    Moments v;
    const double t_final = times.At(times.k - 1);
    const int64_t chains = std::max<int64_t>(2, oracle_samples);
    for (int64_t c = 0; c < chains; ++c) {
      PhiloxEngine rng(seed, kOracleStream + 1 + static_cast<uint64_t>(c));
      v.Add(EvaluateStatistic(f, advance(config.theta_start, t_final, rng),
                              reference));
    }
    oracle = MonteCarloEstimate{v.Variance(), v.VarianceSe()};
  }
  report.oracle_v = oracle.value;
  report.oracle_se = oracle.standard_error;
  report.abs_bias = std::abs(report.mean_s - report.oracle_v);

  const double smooth = quad != nullptr ? 1.0 : model.Smoothness(*data) / m;
  report.burn_in_bound =
      BurnInGamma(smooth, p,
                  (config.theta_start - reference).squaredNorm(),
                  config.bound_delta, config.bound_constant);
  return report;
}

double BurnInGamma(double smoothness, int p, double dist0_sq, double delta,
                   double c) {
  if (!(delta > 0 && delta < 1)) throw InvalidArgument("Delta must lie in (0, 1)");
  if (!(c > 0)) throw InvalidArgument("c must be positive");
  if (!(smoothness > 0)) throw InvalidArgument("smoothness must be positive");
  const double log_inv = std::log(1.0 / delta);
  return 1.0 / (2.0 * smoothness) +
         std::log(c * smoothness * (p + log_inv + dist0_sq)) + c * log_inv;
}

double RenyiGaussiansSharedCov(const Eigen::VectorXd& mu1,
                               const Eigen::VectorXd& mu2, double variance,
                               double alpha) {
  if (mu1.size() != mu2.size()) throw InvalidArgument("mean dimensions differ");
  if (!(variance > 0)) throw InvalidArgument("variance must be positive");
  if (!(alpha > 1)) throw InvalidArgument("Renyi order must exceed 1");
  return alpha * (mu1 - mu2).squaredNorm() / (2.0 * variance);
}

double ExpectationGapBound(double d2) {
  if (!(d2 >= 0)) throw InvalidArgument("divergence must be nonnegative");
  return std::sqrt(std::expm1(d2));
}

BoundCheck CheckExpectationGap(double mean_gap, double variance,
                               int64_t samples, uint64_t seed) {
  if (samples < 2) throw InvalidArgument("need >= 2 samples");
  if (!(variance > 0)) throw InvalidArgument("variance must be positive");
  const double sd = std::sqrt(variance);
  PhiloxEngine rng_p(seed, 11), rng_q(seed, 12);
  Moments gp, gq;
  for (int64_t i = 0; i < samples; ++i) {
    gp.Add(Clamp1(sd * rng_p.NextGaussian()));
    gq.Add(Clamp1(mean_gap + sd * rng_q.NextGaussian()));
  }
  BoundCheck out;
  out.empirical = std::abs(gp.Mean() - gq.Mean());
  out.standard_error =
      std::sqrt(gp.MeanSe() * gp.MeanSe() + gq.MeanSe() * gq.MeanSe());
  Eigen::VectorXd a(1), b(1);
  a << 0.0;
  b << mean_gap;
  out.bound = ExpectationGapBound(RenyiGaussiansSharedCov(a, b, variance, 2.0));
  return out;
}

BoundCheck SubgaussianTailCheck(int p, double x, int64_t samples,
                                uint64_t seed) {
  if (p < 1 || samples < 2) throw InvalidArgument("need p >= 1 and >= 2 samples");
  if (!(x >= 0)) throw InvalidArgument("x must be nonnegative");
  PhiloxEngine rng(seed, 21);
  const double threshold = std::sqrt(static_cast<double>(p)) + x;
  int64_t exceed = 0;
  for (int64_t i = 0; i < samples; ++i) {
    double ss = 0.0;
    for (int j = 0; j < p; ++j) {
      const double z = rng.NextGaussian();
      ss += z * z;
    }
    if (std::sqrt(ss) > threshold) ++exceed;
  }
  BoundCheck out;
  const double n = static_cast<double>(samples);
  out.empirical = exceed / n;
  out.standard_error = std::sqrt(out.empirical * (1 - out.empirical) / n);
  out.bound = std::exp(-x * x / 2.0);
  return out;
}

}  // namespace dpckpt
