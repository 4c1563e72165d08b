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

// zCDP accounting for full-batch Gaussian mechanisms.

#ifndef DPCKPT_PRIVACY_H_
#define DPCKPT_PRIVACY_H_

#include <cstdint>
#include <span>

namespace dpckpt {

// rho-zCDP budget with the (epsilon, delta) it converts to. An infinite rho
// stands for a noiseless run.
struct PrivacyBudget {
  double rho = 0.0;
  double delta = 1e-5;
  double epsilon = 0.0;

  static PrivacyBudget FromRho(double rho, double delta);

  bool operator==(const PrivacyBudget&) const = default;
};

// Per-coordinate variance of the Gaussian noise added to a gradient.
struct NoiseScale {
  double variance_per_step = 0.0;

  double stddev() const;
};

// Noise for the full-batch projected DP-SGD: L^2 T / (2 n rho).
NoiseScale CalibrateTheoretical(double lipschitz, int64_t steps, int64_t n,
                                double rho);

// epsilon = rho + 2 sqrt(rho ln(1/delta)).
double ZcdpToEpsilon(double rho, double delta);

// Inverse of ZcdpToEpsilon in rho for a fixed delta.
double EpsilonToZcdp(double epsilon, double delta);

// zCDP composes additively.
double ComposeZcdp(std::span<const double> rhos);

struct PracticalCalibration {
  // Stddev of the noise added to the sum of clipped per-example gradients.
  double sum_noise_stddev = 0.0;
  double rho_per_step = 0.0;
};

// Gaussian mechanism on a clipped sum: sensitivity clip_norm, noise
// z * clip_norm, rho = 1 / (2 z^2).
PracticalCalibration CalibratePractical(double clip_norm,
                                        double noise_multiplier);

// Noise multiplier that spends `rho_total` over `steps` full-batch steps.
double NoiseMultiplierForBudget(double rho_total, int64_t steps);

// Monte-Carlo audit of a 1-d Gaussian sum query with sensitivity 1.
struct PrivacyAuditResult {
  double epsilon = 0.0;
  double delta_bound = 0.0;         // delta promised by the conversion
  double delta_empirical = 0.0;     // E_P[(1 - e^{eps - loss})_+]
  double delta_standard_error = 0.0;
  double delta_exact = 0.0;         // closed-form hockey-stick divergence
  double max_event_violation = 0.0; // max_S P(S) - e^eps Q(S) - delta over
                                    // privacy-loss threshold events
  double event_standard_error = 0.0;
  int64_t samples = 0;

  // No violation beyond `slack` Monte-Carlo standard errors.
  bool Holds(double slack = 3.0) const;
};

PrivacyAuditResult AuditGaussianSumQuery(double rho, double delta,
                                         int64_t samples, uint64_t seed);

}  // namespace dpckpt

#endif  // DPCKPT_PRIVACY_H_
