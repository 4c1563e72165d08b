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

// Experiment orchestration: configuration, data and model construction,
// multi-seed runs and the task drivers behind the CLI.

#ifndef DPCKPT_HARNESS_H_
#define DPCKPT_HARNESS_H_

#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpckpt/aggregate.h"
#include "dpckpt/config.h"
#include "dpckpt/dpld.h"
#include "dpckpt/model.h"
#include "dpckpt/trainer.h"
#include "dpckpt/uncertainty.h"

namespace dpckpt {

enum class Task {
  kRiskCompare,
  kAggregateEval,
  kPdsEval,
  kUqCompare,
  kDpldBias,
  kEmaSweep,
  kKSweep,
};

std::string_view TaskName(Task task);
Task ParseTask(std::string_view name);

struct DataSpec {
  enum class Source { kSynthetic, kCsv };

  Source source = Source::kSynthetic;
  // Synthetic clusters: n training rows plus the validation / heldout / test
  // row counts, all drawn from one generator and split disjointly.
  int n = 5000;
  int p = 20;
  int classes = 10;
  double separation = 1.0;
  uint64_t seed = 0;
  int validation = 0;
  int heldout = 0;
  int test = 0;
  // CSV source: one file per partition; empty means absent.
  std::string train_csv;
  std::string validation_csv;
  std::string heldout_csv;
  std::string test_csv;
};

struct ModelSpec {
  LossKind kind = LossKind::kLogistic;
  double l2 = 0.0;
  int hidden = 16;
  // tiny_mlp only: supplied constants.
  double lipschitz = 1.0;
  double smoothness = 1.0;
  // Quadratic only: dimension of the center (placed at the origin).
  int dimension = 4;
};

// At most one of rho / epsilon; noise_multiplier overrides both in practical
// mode. None given means rho = 0.5.
struct PrivacySpec {
  std::optional<double> rho;
  std::optional<double> epsilon;
  std::optional<double> noise_multiplier;
};

struct PdsSpec {
  bool enabled = false;
  // 0 selects steps / 8.
  int64_t period = 0;
};

struct EvalSpec {
  // Trailing window as a fraction of the checkpoints.
  double window_fraction = 0.1;
  std::vector<double> ema_betas;
  std::vector<int> ks;
  // riskCompare settings.
  double risk_alpha = 0.5;
  double risk_gamma = 1.0;
};

struct UqSpec {
  UqMethod method = UqMethod::kLastKCheckpoints;
  std::vector<int> ks{5};
  double level = 0.95;
  StatisticMode statistic = StatisticMode::kModalClassProbability;
  int pool = 10;
  int test_inputs = 0;
  std::vector<double> epsilons{1.0, 8.0};
};

struct DpldSpec {
  enum class Model { kQuadratic, kLogistic };

  Model model = Model::kQuadratic;
  int p = 4;
  double sigma = 1.0;
  int k = 5;
  int64_t trials = 10000;
  LdStatistic statistic = LdStatistic::kClampedFirstCoordinate;
  double start_distance = 10.0;
  double step_size = 1e-3;
  std::vector<double> t1s{0.1, 1.0, 10.0};
  std::vector<double> gaps{10.0};
  int64_t oracle_samples = 1000000;
  double bound_constant = 4.0;
  double bound_delta = 0.01;
};

struct ExperimentConfig {
  Task task = Task::kAggregateEval;
  DataSpec data;
  ModelSpec model;
  TrainerConfig trainer;
  PrivacySpec privacy;
  PdsSpec pds;
  std::vector<AggregationSpec> aggregations;
  EvalSpec eval;
  UqSpec uq;
  DpldSpec dpld;
  std::vector<uint64_t> seeds;
  int workers = 1;
};

// Reads every recognised key, applies task-dependent defaults and rejects
// unknown keys. Throws ConfigError naming the offending key.
ExperimentConfig ParseExperimentConfig(const KeyValueConfig& kv);

// Inverse of ParseExperimentConfig: every field written out.
KeyValueConfig ExperimentConfigToKeyValues(const ExperimentConfig& config);

// `kind:key=value,key=value`; k = 0 or beta = 0 mean "tune on validation".
AggregationSpec ParseAggregationSpec(std::string_view text);
std::string FormatAggregationSpec(const AggregationSpec& spec);

struct Partitions {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> validation;  // may be null
  std::shared_ptr<const Dataset> heldout;     // may be null
  std::shared_ptr<const Dataset> test;        // may be null
};

// Throws ConfigError if two present partitions share a tag or a source file,
// or if a partition carries the wrong tag.
void CheckDisjointPartitions(const Partitions& parts, const DataSpec& spec);

Partitions BuildPartitions(const DataSpec& spec);
std::shared_ptr<const LossModel> BuildModel(const ModelSpec& spec,
                                            const Dataset& train);

// Total zCDP budget the config asks for.
double ResolveRho(const PrivacySpec& privacy, double delta);

// One training run for `seed` under the config's trainer settings. The
// diurnal sampler, if enabled, takes even labels from source A and odd
// labels from source B.
RunRecord TrainOne(const ExperimentConfig& config, const Partitions& parts,
                   const LossModel& model, uint64_t seed,
                   const Dataset* eval);

// Index of the best accuracy; ties go to the smaller candidate value.
size_t TuneOnValidation(std::span<const double> candidates,
                        std::span<const double> accuracies);

struct WindowStats {
  std::vector<double> series;
  double mean = 0.0;
  double std = 0.0;  // (n - 1) denominator
};

// Mean and sample std of a series; needs >= 2 values.
WindowStats SummarizeSeries(std::span<const double> values);

struct StabilityResult {
  std::vector<int64_t> steps;
  WindowStats baseline;
  WindowStats aggregate;
};

// Per-checkpoint accuracy on `eval` of the raw checkpoint (baseline) and of
// `spec` applied to the checkpoints up to that point, over the last `window`
// checkpoints. window < 2 or larger than the run is an error.
StabilityResult StabilityReport(const RunRecord& run,
                                const AggregationSpec& spec,
                                const LossModel& model, const Dataset& eval,
                                int window);

struct AggregateResult {
  AggregationSpec requested;
  AggregationSpec resolved;
  double test_accuracy = 0.0;
  double validation_accuracy = 0.0;  // NaN without validation data
};

// Resolves tuned hyperparameters against the validation partition, then
// scores on test. Candidate grids come from `eval`.
AggregateResult EvaluateAggregate(const AggregationSpec& spec,
                                  const RunRecord& run, const LossModel& model,
                                  const Partitions& parts,
                                  const EvalSpec& eval);

// Mean and (n-1)-std over seeds of one metric for one setting.
struct ResultRow {
  std::string setting;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  int num_seeds = 0;
  int num_diverged = 0;
};

struct SeriesPoint {
  uint64_t seed = 0;
  int64_t step = 0;
  std::string method;
  double value = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  // Per-seed values behind each row, keyed "setting|metric".
  std::map<std::string, std::vector<double>> per_seed;
  // Tidy per-step data for plots.
  std::vector<SeriesPoint> series;

  void Add(const std::string& setting, const std::string& metric,
           std::vector<double> values, int num_diverged = 0);
  const ResultRow& Find(const std::string& setting,
                        const std::string& metric) const;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<VarianceBiasReport> dpld;
  int diverged = 0;
};

ExperimentResult RunExperiment(const ExperimentConfig& config);

// Runs fn(0..count-1) on up to `workers` threads and returns the results in
// index order. The first exception by index is rethrown after all finish.
template <typename R>
std::vector<R> ParallelMap(int count, int workers,
                           const std::function<R(int)>& fn);

// Same, but a NumericDivergence leaves an empty slot instead of throwing.
template <typename R>
std::vector<std::optional<R>> ParallelMapTolerant(
    int count, int workers, const std::function<R(int)>& fn);

}  // namespace dpckpt

#include "dpckpt/harness_inl.h"

#endif  // DPCKPT_HARNESS_H_
