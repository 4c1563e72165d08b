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

#include "dpckpt/aggregate.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

void RequireNonEmpty(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw InvalidArgument("no checkpoints to aggregate");
}

void RequireModels(std::span<const ParameterVector> models) {
  if (models.empty()) throw InvalidArgument("need at least one model");
}

}  // namespace

double EmaCoefficient(double beta, int64_t t) {
  const double warm = (1.0 + static_cast<double>(t)) / (10.0 + static_cast<double>(t));
  return std::min(beta, warm);
}

EmaState::EmaState(ParameterVector theta0, double beta)
    : current_(std::move(theta0)), beta_(beta) {
  if (!(beta_ > 0 && beta_ <= 1)) throw InvalidArgument("beta must lie in (0, 1]");
}

void EmaState::Update(const ParameterVector& theta_t, int64_t t) {
  if (t != step_count_ + 1) {
    throw InvalidArgument("EMA update expects t = " +
                          std::to_string(step_count_ + 1));
  }
  if (theta_t.size() != current_.size()) {
    throw InvalidArgument("EMA update dimension mismatch");
  }
  const double b = EmaCoefficient(beta_, t);
  current_ += b * (theta_t - current_);
  step_count_ = t;
}

PdaState::PdaState(double gamma) : gamma_(gamma) {
  if (!(gamma_ >= 0)) throw InvalidArgument("gamma must be nonnegative");
}

double PdaState::Weight(double gamma, int64_t t) {
  return (gamma + 1.0) / (static_cast<double>(t) + gamma);
}

void PdaState::Update(const ParameterVector& theta_t, int64_t t) {
  if (t != step_count_ + 1) {
    throw InvalidArgument("PDA update expects t = " +
                          std::to_string(step_count_ + 1));
  }
  if (t == 1) {
    current_ = theta_t;
  } else {
    if (theta_t.size() != current_.size()) {
      throw InvalidArgument("PDA update dimension mismatch");
    }
    const double w = Weight(gamma_, t);
    current_ += w * (theta_t - current_);
  }
  step_count_ = t;
}

const ParameterVector& PdaState::current() const {
  if (step_count_ == 0) throw PreconditionError("PDA has no iterates yet");
  return current_;
}

ParameterVector EmaOverSequence(std::span<const Checkpoint> checkpoints,
                                double beta) {
  RequireNonEmpty(checkpoints);
  EmaState ema(checkpoints.front().params, beta);
  for (size_t i = 1; i < checkpoints.size(); ++i) {
    ema.Update(checkpoints[i].params, static_cast<int64_t>(i));
  }
  return ema.current();
}

ParameterVector PdaOverSequence(std::span<const Checkpoint> checkpoints,
                                double gamma) {
  RequireNonEmpty(checkpoints);
  PdaState pda(gamma);
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    pda.Update(checkpoints[i].params, static_cast<int64_t>(i) + 1);
  }
  return pda.current();
}

ParameterVector UpaPastK(std::span<const Checkpoint> checkpoints, int k) {
  if (k < 1 || k > static_cast<int>(checkpoints.size())) {
    throw InvalidArgument("UPA k=" + std::to_string(k) + " but " +
                          std::to_string(checkpoints.size()) +
                          " checkpoints available");
  }
  const size_t first = checkpoints.size() - k;
  ParameterVector sum = checkpoints[first].params;
  for (size_t i = first + 1; i < checkpoints.size(); ++i) {
    sum += checkpoints[i].params;
  }
  return sum / static_cast<double>(k);
}

ParameterVector UpaTail(std::span<const Checkpoint> checkpoints, double alpha,
                        int64_t total_steps) {
  if (!(alpha > 0 && alpha <= 1)) throw InvalidArgument("alpha must lie in (0, 1]");
  if (total_steps < 1) throw InvalidArgument("total steps must be positive");
  const auto cutoff = static_cast<int64_t>(
      std::floor((1.0 - alpha) * static_cast<double>(total_steps)));
  int count = 0;
  for (auto it = checkpoints.rbegin(); it != checkpoints.rend(); ++it) {
    if (it->step <= cutoff) break;
    ++count;
  }
  if (count == 0) throw InvalidArgument("tail average over an empty tail");
  return UpaPastK(checkpoints, count);
}

std::vector<ParameterVector> LastK(std::span<const Checkpoint> checkpoints,
                                   int k) {
  if (k < 1 || k > static_cast<int>(checkpoints.size())) {
    throw InvalidArgument("requested more checkpoints than available");
  }
  std::vector<ParameterVector> out;
  out.reserve(k);
  for (size_t i = checkpoints.size() - k; i < checkpoints.size(); ++i) {
    out.push_back(checkpoints[i].params);
  }
  return out;
}

int Opa(std::span<const ParameterVector> models, const LossModel& model,
        const FeatureRow& x, bool average_logits) {
  RequireModels(models);
  Eigen::VectorXd sum;
  for (const ParameterVector& theta : models) {
    Eigen::VectorXd v = average_logits ? model.Logits(theta, x)
                                       : Predict(model, theta, x).probs;
    if (sum.size() == 0) {
      sum = std::move(v);
    } else {
      sum += v;
    }
  }
  return PredictionVector{sum / static_cast<double>(models.size())}.Argmax();
}

int MajorityLabel(std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("no labels to vote on");
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  int best = counts.begin()->first;
  int best_count = counts.begin()->second;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

int Omv(std::span<const ParameterVector> models, const LossModel& model,
        const FeatureRow& x) {
  RequireModels(models);
  std::vector<int> labels;
  labels.reserve(models.size());
  for (const ParameterVector& theta : models) {
    labels.push_back(Predict(model, theta, x).Argmax());
  }
  return MajorityLabel(labels);
}

double OpaAccuracy(std::span<const ParameterVector> models,
                   const LossModel& model, const Dataset& data,
                   bool average_logits) {
  RequireModels(models);
  CheckDimensions(model, models.front(), data);
  int correct = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (Opa(models, model, data.x(i), average_logits) == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / data.n();
}

double OmvAccuracy(std::span<const ParameterVector> models,
                   const LossModel& model, const Dataset& data) {
  RequireModels(models);
  CheckDimensions(model, models.front(), data);
  int correct = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (Omv(models, model, data.x(i)) == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / data.n();
}

std::vector<int> RankByAccuracy(std::span<const double> accuracies, int k) {
  if (k < 1 || k > static_cast<int>(accuracies.size())) {
    throw InvalidArgument("best-k: k=" + std::to_string(k) + " but " +
                          std::to_string(accuracies.size()) + " available");
  }
  std::vector<int> order(accuracies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return accuracies[a] > accuracies[b];
  });
  order.resize(k);
  return order;
}

std::vector<int> SelectBestK(std::span<const Checkpoint> checkpoints,
                             const LossModel& model, const Dataset& heldout,
                             int k) {
  if (heldout.partition() == Partition::kTrain) {
    throw InvalidArgument("best-k selection must not use training data");
  }
  std::vector<double> acc;
  acc.reserve(checkpoints.size());
  for (const Checkpoint& c : checkpoints) {
    acc.push_back(Accuracy(model, c.params, heldout));
  }
  return RankByAccuracy(acc, k);
}

ParameterVector EmaOverRanked(std::span<const ParameterVector> ranked,
                              double beta) {
  RequireModels(ranked);
  if (!(beta > 0 && beta <= 1)) throw InvalidArgument("beta must lie in (0, 1]");
  ParameterVector ema = ranked.front();
  for (size_t i = 1; i < ranked.size(); ++i) {
    ema = (1.0 - beta) * ema + beta * ranked[i];
  }
  return ema;
}

std::string_view AggregationKindName(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::kEma: return "ema";
    case AggregationKind::kUpaK: return "upa_k";
    case AggregationKind::kUpaTail: return "upa_tail";
    case AggregationKind::kPda: return "pda";
    case AggregationKind::kOpa: return "opa";
    case AggregationKind::kOmv: return "omv";
    case AggregationKind::kBestK: return "best_k";
  }
  return "unknown";
}

AggregationKind ParseAggregationKind(std::string_view name) {
  for (AggregationKind k :
       {AggregationKind::kEma, AggregationKind::kUpaK, AggregationKind::kUpaTail,
        AggregationKind::kPda, AggregationKind::kOpa, AggregationKind::kOmv,
        AggregationKind::kBestK}) {
    if (AggregationKindName(k) == name) return k;
  }
  throw InvalidArgument("unknown aggregation kind '" + std::string(name) + "'");
}

void AggregationSpec::Validate() const {
  switch (kind) {
    case AggregationKind::kEma:
      if (!(beta > 0 && beta <= 1)) throw InvalidArgument("beta must lie in (0, 1]");
      break;
    case AggregationKind::kUpaTail:
      if (!(alpha > 0 && alpha <= 1)) throw InvalidArgument("alpha must lie in (0, 1]");
      break;
    case AggregationKind::kPda:
      if (!(gamma >= 0)) throw InvalidArgument("gamma must be nonnegative");
      break;
    case AggregationKind::kUpaK:
    case AggregationKind::kOpa:
    case AggregationKind::kOmv:
      if (k < 1) throw InvalidArgument("k must be positive");
      break;
    case AggregationKind::kBestK:
      if (k < 1) throw InvalidArgument("k must be positive");
      if (inner == AggregationKind::kEma && !(beta > 0 && beta <= 1)) {
        throw InvalidArgument("beta must lie in (0, 1]");
      }
      if (inner != AggregationKind::kEma && inner != AggregationKind::kUpaK &&
          inner != AggregationKind::kOpa && inner != AggregationKind::kOmv) {
        throw InvalidArgument("best-k combines with ema, upa_k, opa or omv");
      }
      break;
  }
}

double AggregateAccuracy(const AggregationSpec& spec,
                         std::span<const Checkpoint> checkpoints,
                         int64_t total_steps, const LossModel& model,
                         const Dataset& eval, const Dataset* heldout) {
  spec.Validate();
  RequireNonEmpty(checkpoints);
  switch (spec.kind) {
    case AggregationKind::kEma:
      return Accuracy(model, EmaOverSequence(checkpoints, spec.beta), eval);
    case AggregationKind::kUpaK:
      return Accuracy(model, UpaPastK(checkpoints, spec.k), eval);
    case AggregationKind::kUpaTail:
      return Accuracy(model, UpaTail(checkpoints, spec.alpha, total_steps),
                      eval);
    case AggregationKind::kPda:
      return Accuracy(model, PdaOverSequence(checkpoints, spec.gamma), eval);
    case AggregationKind::kOpa:
      return OpaAccuracy(LastK(checkpoints, spec.k), model, eval);
    case AggregationKind::kOmv:
      return OmvAccuracy(LastK(checkpoints, spec.k), model, eval);
    case AggregationKind::kBestK: {
      if (heldout == nullptr) throw InvalidArgument("best-k needs held-out data");
      std::vector<ParameterVector> ranked;
      for (int i : SelectBestK(checkpoints, model, *heldout, spec.k)) {
        ranked.push_back(checkpoints[i].params);
      }
      switch (spec.inner) {
        case AggregationKind::kEma:
          return Accuracy(model, EmaOverRanked(ranked, spec.beta), eval);
        case AggregationKind::kOpa:
          return OpaAccuracy(ranked, model, eval);
        case AggregationKind::kOmv:
          return OmvAccuracy(ranked, model, eval);
        default: {
          ParameterVector mean = ranked.front();
          for (size_t i = 1; i < ranked.size(); ++i) mean += ranked[i];
          return Accuracy(model, mean / static_cast<double>(ranked.size()),
                          eval);
        }
      }
    }
  }
  return 0.0;
}

}  // namespace dpckpt
