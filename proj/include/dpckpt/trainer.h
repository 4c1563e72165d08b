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

// DP-SGD trainers that emit checkpoint streams.
//
// Two modes are provided. The theoretical mode is full-batch projected
// gradient descent with Gaussian noise calibrated from the Lipschitz
// constant; it is the algorithm whose tail averages have the improved
// excess-risk rate. The practical mode is minibatch DP-SGD with per-example
// clipping, optionally fed by a diurnal (periodically shifting) sampler.
//
// All randomness is keyed on (seed, step, coordinate) through CounterRng, so
// a run is bit-reproducible regardless of what else executes concurrently.

#ifndef DPCKPT_TRAINER_H_
#define DPCKPT_TRAINER_H_

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpckpt/model.h"
#include "dpckpt/privacy.h"

namespace dpckpt {

enum class TrainerMode { kTheoretical, kPractical };

std::string_view TrainerModeName(TrainerMode mode);

struct StepSchedule {
  enum class Kind {
    kConstant,     // eta_t = scale
    kInverseSqrt,  // eta_t = scale / sqrt(t)
    // eta_t = 2R / (G_eff sqrt(t)) with G_eff = L + sigma_b sqrt(p); resolved
    // by the theoretical trainer once L and sigma_b are known.
    kTheoremDefault,
  };

  Kind kind = Kind::kConstant;
  double scale = 0.1;

  static StepSchedule Constant(double c) { return {Kind::kConstant, c}; }
  static StepSchedule InverseSqrt(double c) { return {Kind::kInverseSqrt, c}; }
  static StepSchedule TheoremDefault() { return {Kind::kTheoremDefault, 0.0}; }

  // Step size for 1-based step t. kTheoremDefault must be resolved first.
  double At(int64_t t) const;
};

std::string_view StepScheduleKindName(StepSchedule::Kind kind);

// Constant c in eta_t = c / sqrt(t) for the default theorem schedule.
double TheoremStepScale(double radius, double lipschitz, double noise_stddev,
                        int dimension);

struct TrainerConfig {
  TrainerMode mode = TrainerMode::kTheoretical;
  int64_t steps = 100;
  StepSchedule eta = StepSchedule::Constant(0.1);
  // The constraint set is the l2 ball of this radius at the origin; infinity
  // disables projection (practical mode only).
  double projection_radius = std::numeric_limits<double>::infinity();
  double clip_norm = 1.0;
  int batch_size = 64;
  // 0 selects the default cadence (every step up to 2048 steps).
  int64_t checkpoint_every = 0;
  uint64_t seed = 0;
  double delta = 1e-5;
  std::shared_ptr<const DiurnalSchedule> diurnal;
  // Theoretical mode: replaces the calibrated per-coordinate noise variance.
  // Used for controlled simulations; the budget then reflects the override.
  std::optional<double> noise_variance_override;
};

// Checkpoint spacing for a run of `steps` when none is configured.
int64_t DefaultCheckpointEvery(int64_t steps);

struct Checkpoint {
  int64_t step = 0;
  ParameterVector params;
};

struct StepMetrics {
  int64_t step = 0;
  double train_loss = 0.0;
  // NaN when no evaluation set was supplied.
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct RunRecord {
  TrainerConfig config;
  PrivacyBudget budget;
  double rho_per_step = 0.0;
  double noise_variance = 0.0;  // per coordinate, on the update direction
  double lipschitz = 0.0;       // theoretical mode
  double eta_scale = 0.0;       // resolved step-size constant
  int dimension = 0;
  uint64_t seed = 0;
  std::vector<Checkpoint> checkpoints;
  std::vector<StepMetrics> metrics;

  const Checkpoint& last() const { return checkpoints.back(); }
};

// ceil(n * rho): the step count used by the excess-risk analysis.
int64_t ChooseSteps(int64_t n, double rho);

// Euclidean projection onto the ball of radius `radius` at the origin.
ParameterVector ProjectL2(const ParameterVector& v, double radius);

// Full-batch projected DP-SGD from theta_0 = 0. rho = +infinity runs
// noiseless gradient descent. Throws NumericDivergence if the loss or
// iterate stops being finite.
RunRecord DpSgdTheoretical(const LossModel& model, const Dataset& data,
                           const TrainerConfig& config, double rho,
                           const Dataset* eval = nullptr);

// Minibatch DP-SGD with per-example clipping. noise_multiplier = 0 runs
// without noise (rho = +infinity). theta_0 ~ U[-0.01, 0.01]^p.
RunRecord DpSgdPractical(const LossModel& model, const Dataset& data,
                         const TrainerConfig& config, double noise_multiplier,
                         const Dataset* eval = nullptr);

// Minibatch indices for 1-based step `step`, without replacement. Exposed so
// callers can replay the exact batches a practical run used.
std::vector<int> SampleBatchIndices(uint64_t seed, int64_t step, int n,
                                    int batch_size);

// Per-coordinate noise the practical trainer adds at `step`, before scaling.
double TrainerNoise(uint64_t seed, int64_t step, int coordinate);

// Initial parameters of a practical run.
ParameterVector PracticalInit(uint64_t seed, int dimension);

// Scales `g` down to norm `clip_norm` if it is longer.
ParameterVector ClipToNorm(const ParameterVector& g, double clip_norm);

// Excess empirical risk over the constraint ball, relative to a minimizer
// found by long noiseless projected gradient descent.
class ExcessRiskEvaluator {
 public:
  ExcessRiskEvaluator(std::shared_ptr<const LossModel> model,
                      std::shared_ptr<const Dataset> data, double radius);

  // Projected gradient descent with step 1/M until the gradient mapping is
  // below `tolerance` or `max_steps` is reached. Returns steps taken.
  int64_t ComputeMinimizer(int64_t max_steps = 100000,
                           double tolerance = 1e-9);

  bool has_minimizer() const { return minimizer_.has_value(); }
  const ParameterVector& minimizer() const;
  double min_loss() const;

  // loss(theta) - min loss. Throws PreconditionError before
  // ComputeMinimizer().
  double ExcessRisk(const ParameterVector& theta) const;

 private:
  std::shared_ptr<const LossModel> model_;
  std::shared_ptr<const Dataset> data_;
  double radius_;
  std::optional<ParameterVector> minimizer_;
  double min_loss_ = 0.0;
};

}  // namespace dpckpt

#endif  // DPCKPT_TRAINER_H_
