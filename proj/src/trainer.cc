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
#include <numeric>
#include <utility>

#include "dpckpt/errors.h"
#include "dpckpt/rng.h"

namespace dpckpt {
namespace {

// Counter streams; the noise stream for step t is t itself.
constexpr uint64_t kBatchStreamBase = uint64_t{1} << 40;
constexpr uint64_t kInitStream = uint64_t{1} << 41;

constexpr int64_t kMaxStoredCheckpoints = 2048;

void ValidateCommon(const TrainerConfig& config) {
  if (config.steps < 1) throw InvalidArgument("steps must be >= 1");
  if (config.checkpoint_every < 0 || config.checkpoint_every > config.steps) {
    throw InvalidArgument("checkpoint_every must lie in [0, steps]");
  }
  if (!(config.projection_radius > 0)) {
    throw InvalidArgument("projection radius must be positive");
  }
  if (!(config.delta > 0 && config.delta < 1)) {
    throw InvalidArgument("delta must lie in (0, 1)");
  }
  if (config.eta.kind != StepSchedule::Kind::kTheoremDefault &&
      !(config.eta.scale > 0)) {
    throw InvalidArgument("step size scale must be positive");
  }
}

bool IsCheckpointStep(int64_t t, int64_t every, int64_t steps) {
  return t % every == 0 || t == steps;
}

StepMetrics Measure(const LossModel& model, const ParameterVector& theta,
                    const Dataset& data, const Dataset* eval, int64_t t) {
  StepMetrics m;
  m.step = t;
  m.train_loss = LossFull(model, theta, data);
  if (!std::isfinite(m.train_loss) || !theta.allFinite()) {
    throw NumericDivergence("training diverged", t);
  }
  if (eval != nullptr) m.eval_accuracy = Accuracy(model, theta, *eval);
  return m;
}

}  // namespace

std::string_view TrainerModeName(TrainerMode mode) {
  return mode == TrainerMode::kTheoretical ? "theoretical" : "practical";
}

std::string_view StepScheduleKindName(StepSchedule::Kind kind) {
  switch (kind) {
    case StepSchedule::Kind::kConstant: return "constant";
    case StepSchedule::Kind::kInverseSqrt: return "inverse_sqrt";
    case StepSchedule::Kind::kTheoremDefault: return "theorem_default";
  }
  return "unknown";
}

double StepSchedule::At(int64_t t) const {
  switch (kind) {
    case Kind::kConstant: return scale;
    case Kind::kInverseSqrt: return scale / std::sqrt(static_cast<double>(t));
    case Kind::kTheoremDefault: break;
  }
  throw PreconditionError("theorem-default step size used before resolution");
}

double TheoremStepScale(double radius, double lipschitz, double noise_stddev,
                        int dimension) {
  const double g_eff = lipschitz + noise_stddev * std::sqrt(dimension);
  if (!(g_eff > 0)) throw InvalidArgument("effective gradient bound is zero");
  return 2.0 * radius / g_eff;
}

int64_t DefaultCheckpointEvery(int64_t steps) {
  if (steps <= kMaxStoredCheckpoints) return 1;
  return (steps + kMaxStoredCheckpoints - 1) / kMaxStoredCheckpoints;
}

int64_t ChooseSteps(int64_t n, double rho) {
  if (n < 1 || !(rho > 0)) throw InvalidArgument("n and rho must be positive");
  return static_cast<int64_t>(std::ceil(static_cast<double>(n) * rho));
}

ParameterVector ProjectL2(const ParameterVector& v, double radius) {
  if (!(radius > 0)) throw InvalidArgument("projection radius must be positive");
  const double norm = v.stableNorm();
  if (norm <= radius) return v;
  ParameterVector out = v * (radius / norm);
  // Rounding can leave the norm an ulp above the radius; shave it so the
  // result is inside the ball and a second projection is the identity.
  while (out.stableNorm() > radius) out *= 1.0 - 0x1p-52;
  return out;
}

ParameterVector ClipToNorm(const ParameterVector& g, double clip_norm) {
  const double norm = g.norm();
  if (norm <= clip_norm) return g;
  return g * (clip_norm / norm);
}

double TrainerNoise(uint64_t seed, int64_t step, int coordinate) {
  return CounterRng(seed).Gaussian(static_cast<uint64_t>(step),
                                   static_cast<uint64_t>(coordinate));
}

std::vector<int> SampleBatchIndices(uint64_t seed, int64_t step, int n,
                                    int batch_size) {
  if (batch_size < 1 || batch_size > n) {
    throw InvalidArgument("batch size must lie in [1, n]");
  }
  PhiloxEngine rng(seed, kBatchStreamBase + static_cast<uint64_t>(step));
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < batch_size; ++i) {
    const int j = i + static_cast<int>(rng.NextBelow(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(batch_size);
  return pool;
}

ParameterVector PracticalInit(uint64_t seed, int dimension) {
  PhiloxEngine rng(seed, kInitStream);
  ParameterVector theta(dimension);
  for (int j = 0; j < dimension; ++j) {
    theta[j] = -0.01 + 0.02 * rng.NextUniform();
  }
  return theta;
}

RunRecord DpSgdTheoretical(const LossModel& model, const Dataset& data,
                           const TrainerConfig& config, double rho,
                           const Dataset* eval) {
  ValidateCommon(config);
  if (config.mode != TrainerMode::kTheoretical) {
    throw InvalidArgument("config is not in theoretical mode");
  }
  if (!std::isfinite(config.projection_radius)) {
    throw InvalidArgument("theoretical mode needs a finite projection radius");
  }
  if (!(rho > 0)) throw InvalidArgument("rho must be positive");

  const int dim = model.dimension();
  const double radius = config.projection_radius;
  const double lipschitz = model.Lipschitz(data, radius);
  if (!std::isfinite(lipschitz)) {
    throw InvalidArgument("theoretical mode needs a finite Lipschitz bound");
  }

  RunRecord run;
  run.config = config;
  run.seed = config.seed;
  run.dimension = dim;
  run.lipschitz = lipschitz;
  const int64_t steps = config.steps;
  if (config.noise_variance_override) {
    run.noise_variance = *config.noise_variance_override;
    if (!(run.noise_variance >= 0)) {
      throw InvalidArgument("noise variance override must be nonnegative");
    }
    // Each step is a Gaussian mechanism with sensitivity L / n.
    const double per_step_sens = lipschitz / data.n();
    run.rho_per_step =
        run.noise_variance > 0
            ? per_step_sens * per_step_sens / (2.0 * run.noise_variance)
            : std::numeric_limits<double>::infinity();
  } else {
    run.noise_variance =
        CalibrateTheoretical(lipschitz, steps, data.n(), rho).variance_per_step;
    run.rho_per_step = rho / static_cast<double>(steps);
  }
  run.budget = PrivacyBudget::FromRho(
      static_cast<double>(steps) * run.rho_per_step, config.delta);

  StepSchedule eta = config.eta;
  if (eta.kind == StepSchedule::Kind::kTheoremDefault) {
    eta = StepSchedule::InverseSqrt(TheoremStepScale(
        radius, lipschitz, std::sqrt(run.noise_variance), dim));
  }
  run.eta_scale = eta.scale;
  run.config.eta = eta;

  const int64_t every = config.checkpoint_every > 0
                            ? config.checkpoint_every
                            : DefaultCheckpointEvery(steps);
  const double noise_std = std::sqrt(run.noise_variance);
  const CounterRng rng(config.seed);

  ParameterVector theta = ParameterVector::Zero(dim);
  run.metrics.reserve(steps);
  for (int64_t t = 1; t <= steps; ++t) {
    ParameterVector direction = GradFull(model, theta, data);
    if (noise_std > 0) {
      for (int j = 0; j < dim; ++j) {
        direction[j] += noise_std * rng.Gaussian(t, j);
      }
    }
    theta = ProjectL2(theta - eta.At(t) * direction, radius);
    run.metrics.push_back(Measure(model, theta, data, eval, t));
    if (IsCheckpointStep(t, every, steps)) {
      run.checkpoints.push_back(Checkpoint{t, theta});
    }
  }
  return run;
}

RunRecord DpSgdPractical(const LossModel& model, const Dataset& data,
                         const TrainerConfig& config, double noise_multiplier,
                         const Dataset* eval) {
  ValidateCommon(config);
  if (config.mode != TrainerMode::kPractical) {
    throw InvalidArgument("config is not in practical mode");
  }
  if (config.eta.kind == StepSchedule::Kind::kTheoremDefault) {
    throw InvalidArgument("theorem-default step size is theoretical-mode only");
  }
  if (!(config.clip_norm > 0)) throw InvalidArgument("clip norm must be positive");
  if (!(noise_multiplier >= 0)) {
    throw InvalidArgument("noise multiplier must be nonnegative");
  }
  if (config.diurnal == nullptr &&
      (config.batch_size < 1 || config.batch_size > data.n())) {
    throw InvalidArgument("batch size must lie in [1, n]");
  }
  if (config.diurnal != nullptr && config.batch_size < 1) {
    throw InvalidArgument("batch size must be positive");
  }

  const int dim = model.dimension();
  const int batch = config.batch_size;
  const int64_t steps = config.steps;

  RunRecord run;
  run.config = config;
  run.seed = config.seed;
  run.dimension = dim;
  run.eta_scale = config.eta.scale;
  if (noise_multiplier > 0) {
    const PracticalCalibration cal =
        CalibratePractical(config.clip_norm, noise_multiplier);
    run.rho_per_step = cal.rho_per_step;
    const double mean_std = cal.sum_noise_stddev / batch;
    run.noise_variance = mean_std * mean_std;
  } else {
    run.rho_per_step = std::numeric_limits<double>::infinity();
    run.noise_variance = 0.0;
  }
  run.budget = PrivacyBudget::FromRho(
      static_cast<double>(steps) * run.rho_per_step, config.delta);

  const int64_t every = config.checkpoint_every > 0
                            ? config.checkpoint_every
                            : DefaultCheckpointEvery(steps);
  const double noise_std = std::sqrt(run.noise_variance);
  const CounterRng rng(config.seed);

  ParameterVector theta = PracticalInit(config.seed, dim);
  run.metrics.reserve(steps);
  for (int64_t t = 1; t <= steps; ++t) {
    ParameterVector sum = ParameterVector::Zero(dim);
    if (config.diurnal != nullptr) {
      PhiloxEngine batch_rng(config.seed,
                             kBatchStreamBase + static_cast<uint64_t>(t));
      const DiurnalBatch drawn =
          DiurnalDraw(*config.diurnal, t - 1, batch, batch_rng);
      CheckDimensions(model, theta, drawn.batch);
      for (int i = 0; i < batch; ++i) {
        sum += ClipToNorm(model.ExampleGradient(theta, drawn.batch.x(i),
                                                drawn.batch.label(i)),
                          config.clip_norm);
      }
    } else {
      CheckDimensions(model, theta, data);
      for (int i : SampleBatchIndices(config.seed, t, data.n(), batch)) {
        sum += ClipToNorm(model.ExampleGradient(theta, data.x(i), data.label(i)),
                          config.clip_norm);
      }
    }
    ParameterVector direction = sum / static_cast<double>(batch);
    if (noise_std > 0) {
      for (int j = 0; j < dim; ++j) {
        direction[j] += noise_std * rng.Gaussian(t, j);
      }
    }
    theta -= config.eta.At(t) * direction;
    if (std::isfinite(config.projection_radius)) {
      theta = ProjectL2(theta, config.projection_radius);
    }
    run.metrics.push_back(Measure(model, theta, data, eval, t));
    if (IsCheckpointStep(t, every, steps)) {
      run.checkpoints.push_back(Checkpoint{t, theta});
    }
  }
  return run;
}

ExcessRiskEvaluator::ExcessRiskEvaluator(std::shared_ptr<const LossModel> model,
                                         std::shared_ptr<const Dataset> data,
                                         double radius)
    : model_(std::move(model)), data_(std::move(data)), radius_(radius) {
  if (model_ == nullptr || data_ == nullptr) {
    throw InvalidArgument("excess risk needs a model and data");
  }
  if (!(radius_ > 0)) throw InvalidArgument("radius must be positive");
}

int64_t ExcessRiskEvaluator::ComputeMinimizer(int64_t max_steps,
                                              double tolerance) {
  const double smooth = model_->Smoothness(*data_);
  const double eta = 1.0 / smooth;
  ParameterVector theta = ParameterVector::Zero(model_->dimension());
  int64_t t = 0;
  for (; t < max_steps; ++t) {
    const ParameterVector next =
        ProjectL2(theta - eta * GradFull(*model_, theta, *data_), radius_);
    const double mapping = (theta - next).norm() / eta;
    theta = next;
    if (mapping < tolerance) {
      ++t;
      break;
    }
  }
  min_loss_ = LossFull(*model_, theta, *data_);
  minimizer_ = std::move(theta);
  return t;
}

const ParameterVector& ExcessRiskEvaluator::minimizer() const {
  if (!minimizer_) throw PreconditionError("minimizer not computed");
  return *minimizer_;
}

double ExcessRiskEvaluator::min_loss() const {
  if (!minimizer_) throw PreconditionError("minimizer not computed");
  return min_loss_;
}

double ExcessRiskEvaluator::ExcessRisk(const ParameterVector& theta) const {
  return LossFull(*model_, theta, *data_) - min_loss();
}

}  // namespace dpckpt
