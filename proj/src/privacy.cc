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
#include <numeric>
#include <vector>

#include "dpckpt/errors.h"
#include "dpckpt/rng.h"

namespace dpckpt {
namespace {

double StandardGaussianCdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void CheckDelta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw InvalidArgument("delta must lie in (0, 1)");
  }
}

}  // namespace

PrivacyBudget PrivacyBudget::FromRho(double rho, double delta) {
  return PrivacyBudget{rho, delta, ZcdpToEpsilon(rho, delta)};
}

double NoiseScale::stddev() const { return std::sqrt(variance_per_step); }

NoiseScale CalibrateTheoretical(double lipschitz, int64_t steps, int64_t n,
                                double rho) {
  if (!(lipschitz > 0) || steps <= 0 || n <= 0 || !(rho > 0)) {
    throw InvalidArgument("calibration arguments must be positive");
  }
  if (std::isinf(rho)) return NoiseScale{0.0};
  return NoiseScale{lipschitz * lipschitz * static_cast<double>(steps) /
                    (2.0 * static_cast<double>(n) * rho)};
}

double ZcdpToEpsilon(double rho, double delta) {
  CheckDelta(delta);
  if (!(rho >= 0)) throw InvalidArgument("rho must be nonnegative");
  if (std::isinf(rho)) return std::numeric_limits<double>::infinity();
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

double EpsilonToZcdp(double epsilon, double delta) {
  CheckDelta(delta);
  if (!(epsilon >= 0)) throw InvalidArgument("epsilon must be nonnegative");
  // Solve (sqrt(rho) + sqrt(ln 1/delta))^2 = epsilon + ln(1/delta).
  const double l = std::log(1.0 / delta);
  const double root = std::sqrt(epsilon + l) - std::sqrt(l);
  return root * root;
}

double ComposeZcdp(std::span<const double> rhos) {
  double total = 0.0;
  for (double r : rhos) {
    if (!(r >= 0)) throw InvalidArgument("rho values must be nonnegative");
    total += r;
  }
  return total;
}

PracticalCalibration CalibratePractical(double clip_norm,
                                        double noise_multiplier) {
  if (!(clip_norm > 0) || !(noise_multiplier > 0)) {
    throw InvalidArgument("clip norm and noise multiplier must be positive");
  }
  return PracticalCalibration{
      noise_multiplier * clip_norm,
      1.0 / (2.0 * noise_multiplier * noise_multiplier)};
}

double NoiseMultiplierForBudget(double rho_total, int64_t steps) {
  if (!(rho_total > 0) || steps <= 0) {
    throw InvalidArgument("budget and step count must be positive");
  }
  return std::sqrt(static_cast<double>(steps) / (2.0 * rho_total));
}

bool PrivacyAuditResult::Holds(double slack) const {
  return delta_empirical <= delta_bound + slack * delta_standard_error &&
         max_event_violation <= slack * event_standard_error;
}

PrivacyAuditResult AuditGaussianSumQuery(double rho, double delta,
                                         int64_t samples, uint64_t seed) {
  if (!(rho > 0) || samples < 2) {
    throw InvalidArgument("audit needs rho > 0 and >= 2 samples");
  }
  CheckDelta(delta);
  PrivacyAuditResult out;
  out.samples = samples;
  out.epsilon = ZcdpToEpsilon(rho, delta);
  out.delta_bound = delta;
  const double sigma = 1.0 / std::sqrt(2.0 * rho);
  const double eps = out.epsilon;
  const double e_eps = std::exp(eps);

  // Output on D is N(0, sigma^2), on the neighbour D' it is N(1, sigma^2).
  // Q-probabilities are estimated through the likelihood ratio on P draws,
  // Q(S) = E_P[1_S e^{-loss}], so tiny Q masses keep a usable estimate.
  PhiloxEngine rng(seed, 1);
  std::vector<double> losses(samples);
  double sum = 0.0, sum_sq = 0.0;
  for (int64_t i = 0; i < samples; ++i) {
    const double x = sigma * rng.NextGaussian();
    losses[i] = (1.0 - 2.0 * x) / (2.0 * sigma * sigma);
    const double term = std::max(0.0, 1.0 - std::exp(eps - losses[i]));
    sum += term;
    sum_sq += term * term;
  }
  const double n = static_cast<double>(samples);
  out.delta_empirical = sum / n;
  const double var = std::max(0.0, sum_sq / n - out.delta_empirical *
                                                   out.delta_empirical);
  out.delta_standard_error = std::sqrt(var / n);
  out.delta_exact = StandardGaussianCdf(-eps * sigma + 0.5 / sigma) -
                    e_eps * StandardGaussianCdf(-eps * sigma - 0.5 / sigma);

  // Privacy-loss histogram: for each threshold l the event {loss > l} has
  // P(S) - e^eps Q(S) = E_P[1{loss > l} (1 - e^{eps - loss})].
  const int kBins = 200;
  const double mean_loss = 1.0 / (2.0 * sigma * sigma);
  const double spread = 6.0 / sigma;
  const double lo = mean_loss - spread, hi = mean_loss + spread;
  std::vector<double> bin_sum(kBins + 2, 0.0), bin_sq(kBins + 2, 0.0);
  for (double loss : losses) {
    const double term = 1.0 - std::exp(eps - loss);
    int b = static_cast<int>(std::floor((loss - lo) / (hi - lo) * kBins)) + 1;
    b = std::clamp(b, 0, kBins + 1);
    bin_sum[b] += term;
    bin_sq[b] += term * term;
  }
  out.max_event_violation = -std::numeric_limits<double>::infinity();
  double tail_sum = 0.0, tail_sq = 0.0;
  for (int b = kBins + 1; b >= 0; --b) {
    tail_sum += bin_sum[b];
    tail_sq += bin_sq[b];
    const double mean = tail_sum / n;
    const double violation = mean - delta;
    if (violation > out.max_event_violation) {
      out.max_event_violation = violation;
      out.event_standard_error =
          std::sqrt(std::max(0.0, tail_sq / n - mean * mean) / n);
    }
  }
  return out;
}

}  // namespace dpckpt
