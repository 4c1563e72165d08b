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

// Checkpoint aggregation.
//
// Parameter aggregates (EMA, uniform past-k / tail averages, polynomial-decay
// averages, EMA over data-selected checkpoints) combine checkpoint weights;
// output aggregates (prediction averaging, majority vote) combine what the
// checkpoints predict. Everything here is a pure function of checkpoints
// that a DP run has already released, so none of it touches the privacy
// ledger.

#ifndef DPCKPT_AGGREGATE_H_
#define DPCKPT_AGGREGATE_H_

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dpckpt/model.h"
#include "dpckpt/trainer.h"

namespace dpckpt {

// Warm-up coefficient min(beta, (1 + t) / (10 + t)).
double EmaCoefficient(double beta, int64_t t);

// Running exponential moving average,
//   ema_t = (1 - beta_t) ema_{t-1} + beta_t theta_t,
// started from ema_0 = theta_0.
class EmaState {
 public:
  EmaState(ParameterVector theta0, double beta);

  // Folds in theta_t; t must be exactly step_count() + 1.
  void Update(const ParameterVector& theta_t, int64_t t);

  const ParameterVector& current() const { return current_; }
  int64_t step_count() const { return step_count_; }
  double beta() const { return beta_; }

 private:
  ParameterVector current_;
  int64_t step_count_ = 0;
  double beta_;
};

// Polynomial-decay average
//   pda[t] = (1 - (g+1)/(t+g)) pda[t-1] + (g+1)/(t+g) theta_t,
// with pda[1] = theta_1. gamma = 0 is the running uniform mean.
class PdaState {
 public:
  explicit PdaState(double gamma);

  // t must be exactly step_count() + 1, starting at 1.
  void Update(const ParameterVector& theta_t, int64_t t);

  const ParameterVector& current() const;
  int64_t step_count() const { return step_count_; }
  double gamma() const { return gamma_; }

  static double Weight(double gamma, int64_t t);

 private:
  double gamma_;
  ParameterVector current_;
  int64_t step_count_ = 0;
};

// EMA over a whole checkpoint sequence (index i plays the role of t).
ParameterVector EmaOverSequence(std::span<const Checkpoint> checkpoints,
                                double beta);

// PDA over a whole checkpoint sequence.
ParameterVector PdaOverSequence(std::span<const Checkpoint> checkpoints,
                                double gamma);

// Mean of the last k checkpoints.
ParameterVector UpaPastK(std::span<const Checkpoint> checkpoints, int k);

// Mean of checkpoints with step > floor((1 - alpha) * total_steps).
ParameterVector UpaTail(std::span<const Checkpoint> checkpoints, double alpha,
                        int64_t total_steps);

// Parameters of the last k checkpoints, oldest first.
std::vector<ParameterVector> LastK(std::span<const Checkpoint> checkpoints,
                                   int k);

// Prediction averaging: argmax of the mean prediction vector (posterior
// probabilities by default, raw logits if `average_logits`). Ties go to the
// lowest class.
int Opa(std::span<const ParameterVector> models, const LossModel& model,
        const FeatureRow& x, bool average_logits = false);

// Majority vote over per-model argmax labels; ties go to the lowest class.
int Omv(std::span<const ParameterVector> models, const LossModel& model,
        const FeatureRow& x);

// Mode of `labels`, lowest label on ties.
int MajorityLabel(std::span<const int> labels);

double OpaAccuracy(std::span<const ParameterVector> models,
                   const LossModel& model, const Dataset& data,
                   bool average_logits = false);
double OmvAccuracy(std::span<const ParameterVector> models,
                   const LossModel& model, const Dataset& data);

// Indices of the k checkpoints with the best held-out accuracy, best
// first; equal accuracies keep the earlier step first. `heldout` must not be
// tagged as training data.
std::vector<int> SelectBestK(std::span<const Checkpoint> checkpoints,
                             const LossModel& model, const Dataset& heldout,
                             int k);

// Same ranking from precomputed accuracies.
std::vector<int> RankByAccuracy(std::span<const double> accuracies, int k);

// Constant-beta EMA over checkpoints in ranked order, seeded with the first.
ParameterVector EmaOverRanked(std::span<const ParameterVector> ranked,
                              double beta);

enum class AggregationKind { kEma, kUpaK, kUpaTail, kPda, kOpa, kOmv, kBestK };

std::string_view AggregationKindName(AggregationKind kind);
AggregationKind ParseAggregationKind(std::string_view name);

// An aggregation and its hyperparameters; only those relevant to `kind` are
// meaningful.
struct AggregationSpec {
  AggregationKind kind = AggregationKind::kUpaK;
  int k = 1;
  double alpha = 1.0;
  double gamma = 0.0;
  double beta = 0.9;
  // kBestK only: how the selected checkpoints are combined (kUpaK = plain
  // mean, kEma = EmaOverRanked, kOpa, kOmv).
  AggregationKind inner = AggregationKind::kEma;

  void Validate() const;
};

// Test accuracy of `spec` applied to the checkpoints. kBestK needs a
// held-out set to rank by.
double AggregateAccuracy(const AggregationSpec& spec,
                         std::span<const Checkpoint> checkpoints,
                         int64_t total_steps, const LossModel& model,
                         const Dataset& eval,
                         const Dataset* heldout = nullptr);

}  // namespace dpckpt

#endif  // DPCKPT_AGGREGATE_H_
