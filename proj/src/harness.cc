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

#include "dpckpt/harness.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <utility>

#include "dpckpt/errors.h"
#include "dpckpt/privacy.h"
#include "dpckpt/rng.h"

namespace dpckpt {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// The six values commonly quoted for EMA tuning, followed by their
// complements. EmaState weights the newest checkpoint by beta, so only the
// small values average over many checkpoints.
const std::vector<double> kLiteralBetas{0.85, 0.9, 0.95, 0.99, 0.999, 0.9999};
const std::vector<double> kComplementBetas{0.15, 0.1,   0.05,
                                           0.01, 0.001, 0.0001};
const std::vector<int64_t> kDefaultKs{3, 5, 10, 20, 50, 100, 200};

template <typename F>
auto Keyed(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(key, e.what());
  }
}

void Require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

int ToInt(const std::string& key, int64_t v) {
  Require(v >= std::numeric_limits<int>::min() &&
              v <= std::numeric_limits<int>::max(),
          key, "value out of range");
  return static_cast<int>(v);
}

std::vector<uint64_t> SeedRange(uint64_t first, uint64_t count) {
  std::vector<uint64_t> out(count);
  std::iota(out.begin(), out.end(), first);
  return out;
}

std::string JoinDoubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += FormatDouble(v[i]);
  }
  return out;
}

template <typename T>
std::string JoinInts(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(v[i]);
  }
  return out;
}

StepSchedule::Kind ParseScheduleKind(std::string_view name) {
  for (StepSchedule::Kind k :
       {StepSchedule::Kind::kConstant, StepSchedule::Kind::kInverseSqrt,
        StepSchedule::Kind::kTheoremDefault}) {
    if (StepScheduleKindName(k) == name) return k;
  }
  throw InvalidArgument("unknown step schedule '" + std::string(name) + "'");
}

LossKind ParseLossKind(std::string_view name) {
  for (LossKind k : {LossKind::kQuadratic, LossKind::kLogistic, LossKind::kTinyMlp}) {
    if (LossKindName(k) == name) return k;
  }
  throw InvalidArgument("unknown model kind '" + std::string(name) + "'");
}

UqMethod ParseUqMethod(std::string_view name) {
  for (UqMethod m : {UqMethod::kIndependentRuns, UqMethod::kLastKCheckpoints}) {
    if (UqMethodName(m) == name) return m;
  }
  throw InvalidArgument("unknown uncertainty method '" + std::string(name) + "'");
}

bool UsesK(AggregationKind kind) {
  return kind == AggregationKind::kUpaK || kind == AggregationKind::kOpa ||
         kind == AggregationKind::kOmv || kind == AggregationKind::kBestK;
}

bool UsesBeta(const AggregationSpec& s) {
  return s.kind == AggregationKind::kEma ||
         (s.kind == AggregationKind::kBestK && s.inner == AggregationKind::kEma);
}

// Values per (setting, metric), collected in first-seen order.
struct SeedOutcome {
  std::vector<std::pair<std::string, std::string>> keys;
  std::vector<double> values;
  std::vector<SeriesPoint> series;
  std::vector<VarianceBiasReport> dpld;

  void Put(const std::string& setting, const std::string& metric, double v) {
    keys.emplace_back(setting, metric);
    values.push_back(v);
  }
};

ExperimentResult Assemble(std::vector<std::optional<SeedOutcome>>& outcomes) {
  ExperimentResult result;
  std::vector<std::pair<std::string, std::string>> order;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& o : outcomes) {
    if (!o) {
      ++result.diverged;
      continue;
    }
    for (const auto& key : o->keys) {
      if (seen.insert(key).second) order.push_back(key);
    }
  }
  for (const auto& key : order) {
    std::vector<double> values;
    for (const auto& o : outcomes) {
      if (!o) continue;
      for (size_t i = 0; i < o->keys.size(); ++i) {
        if (o->keys[i] == key) values.push_back(o->values[i]);
      }
    }
    result.table.Add(key.first, key.second, std::move(values), result.diverged);
  }
  for (auto& o : outcomes) {
    if (!o) continue;
    result.table.series.insert(result.table.series.end(), o->series.begin(),
                               o->series.end());
    result.dpld.insert(result.dpld.end(), o->dpld.begin(), o->dpld.end());
  }
  return result;
}

ExperimentResult RunPerSeed(const ExperimentConfig& config,
                            const std::function<SeedOutcome(uint64_t)>& fn) {
  auto outcomes = ParallelMapTolerant<SeedOutcome>(
      static_cast<int>(config.seeds.size()), config.workers,
      [&](int i) { return fn(config.seeds[i]); });
  return Assemble(outcomes);
}

const Dataset& RequireData(const std::shared_ptr<const Dataset>& d,
                           const std::string& key, const std::string& why) {
  if (d == nullptr) throw ConfigError(key, why);
  return *d;
}

const Dataset* MetricsSet(const Partitions& parts) {
  if (parts.validation) return parts.validation.get();
  return parts.test.get();
}

std::vector<int> FittingKs(const std::vector<int>& ks, int limit) {
  std::vector<int> out;
  for (int k : ks) {
    if (k >= 1 && k <= limit) out.push_back(k);
  }
  return out;
}

// ---- task drivers -------------------------------------------------------

ExperimentResult RunRiskCompare(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  ExcessRiskEvaluator evaluator(model, parts.train, config.trainer.projection_radius);
  evaluator.ComputeMinimizer();
  AggregationSpec tail;
  tail.kind = AggregationKind::kUpaTail;
  tail.alpha = config.eval.risk_alpha;
  AggregationSpec pda;
  pda.kind = AggregationKind::kPda;
  pda.gamma = config.eval.risk_gamma;
  const std::string tail_name = FormatAggregationSpec(tail);
  const std::string pda_name = FormatAggregationSpec(pda);

  return RunPerSeed(config, [&](uint64_t seed) {
    const RunRecord run = TrainOne(config, parts, *model, seed, nullptr);
    if (static_cast<int64_t>(run.checkpoints.size()) != run.config.steps) {
      throw ConfigError("train.checkpoint_every",
                        "riskCompare needs a checkpoint at every step");
    }
    const double last = evaluator.ExcessRisk(run.last().params);
    const double t = evaluator.ExcessRisk(
        UpaTail(run.checkpoints, tail.alpha, run.config.steps));
    const double p = evaluator.ExcessRisk(PdaOverSequence(run.checkpoints, pda.gamma));
    SeedOutcome o;
    o.Put("last_iterate", "excess_risk", last);
    o.Put(tail_name, "excess_risk", t);
    o.Put(pda_name, "excess_risk", p);
    o.Put(tail_name + " vs last_iterate", "win_fraction", t < last ? 1.0 : 0.0);
    o.Put(pda_name + " vs last_iterate", "win_fraction", p < last ? 1.0 : 0.0);
    return o;
  });
}

ExperimentResult RunAggregateEval(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const Dataset& test = RequireData(parts.test, "data.test",
                                    "aggregateEval scores on test data");
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  return RunPerSeed(config, [&](uint64_t seed) {
    const RunRecord run = TrainOne(config, parts, *model, seed, MetricsSet(parts));
    SeedOutcome o;
    o.Put("last_iterate", "test_accuracy", Accuracy(*model, run.last().params, test));
    if (parts.validation) {
      o.Put("last_iterate", "validation_accuracy",
            Accuracy(*model, run.last().params, *parts.validation));
    }
    for (const AggregationSpec& spec : config.aggregations) {
      const AggregateResult r = EvaluateAggregate(spec, run, *model, parts, config.eval);
      const std::string name = FormatAggregationSpec(spec);
      o.Put(name, "test_accuracy", r.test_accuracy);
      if (parts.validation) o.Put(name, "validation_accuracy", r.validation_accuracy);
      if (UsesK(spec.kind) && spec.k == 0) o.Put(name, "resolved_k", r.resolved.k);
      if (UsesBeta(spec) && spec.beta == 0) o.Put(name, "resolved_beta", r.resolved.beta);
    }
    return o;
  });
}

ExperimentResult RunPdsEval(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const Dataset& validation = RequireData(parts.validation, "data.validation",
                                          "pdsEval tunes on validation data");
  const Dataset& test = RequireData(parts.test, "data.test",
                                    "pdsEval scores on test data");
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  return RunPerSeed(config, [&](uint64_t seed) {
    const RunRecord run = TrainOne(config, parts, *model, seed, &validation);
    const int n = static_cast<int>(run.checkpoints.size());
    const int window = std::max(
        2, static_cast<int>(std::lround(config.eval.window_fraction * n)));
    if (window > n) {
      throw ConfigError("eval.window", "trailing window of " + std::to_string(window) +
                                           " exceeds " + std::to_string(n) +
                                           " checkpoints");
    }

    const std::vector<int> ks = FittingKs(config.eval.ks, n - window + 1);
    Require(!ks.empty(), "eval.ks", "no candidate k fits before the window");
    AggregationSpec upa;
    upa.kind = AggregationKind::kUpaK;
    std::vector<double> k_cand, k_acc;
    for (int k : ks) {
      upa.k = k;
      k_cand.push_back(k);
      k_acc.push_back(StabilityReport(run, upa, *model, validation, window).aggregate.mean);
    }
    upa.k = ks[TuneOnValidation(k_cand, k_acc)];

    AggregationSpec ema;
    ema.kind = AggregationKind::kEma;
    std::vector<double> b_acc;
    for (double b : config.eval.ema_betas) {
      ema.beta = b;
      b_acc.push_back(StabilityReport(run, ema, *model, validation, window).aggregate.mean);
    }
    const size_t b_best = TuneOnValidation(config.eval.ema_betas, b_acc);
    ema.beta = config.eval.ema_betas[b_best];
    const size_t k_best = static_cast<size_t>(
        std::find(k_cand.begin(), k_cand.end(), static_cast<double>(upa.k)) -
        k_cand.begin());
    const bool upa_is_best = k_acc[k_best] >= b_acc[b_best];

    const StabilityResult su = StabilityReport(run, upa, *model, test, window);
    const StabilityResult se = StabilityReport(run, ema, *model, test, window);
    SeedOutcome o;
    o.Put("last_iterate", "window_std", su.baseline.std);
    o.Put("last_iterate", "window_mean", su.baseline.mean);
    o.Put("upa_k", "window_std", su.aggregate.std);
    o.Put("upa_k", "window_mean", su.aggregate.mean);
    o.Put("upa_k", "std_ratio", su.aggregate.std / su.baseline.std);
    o.Put("upa_k", "resolved_k", upa.k);
    o.Put("ema", "window_std", se.aggregate.std);
    o.Put("ema", "window_mean", se.aggregate.mean);
    o.Put("ema", "std_ratio", se.aggregate.std / se.baseline.std);
    o.Put("ema", "resolved_beta", ema.beta);
    o.Put("best_aggregate", "window_mean",
          upa_is_best ? su.aggregate.mean : se.aggregate.mean);
    o.Put("best_aggregate", "window_std",
          upa_is_best ? su.aggregate.std : se.aggregate.std);
    for (size_t i = 0; i < su.steps.size(); ++i) {
      o.series.push_back({seed, su.steps[i], "last_iterate", su.baseline.series[i]});
      o.series.push_back({seed, su.steps[i], "upa_k", su.aggregate.series[i]});
      o.series.push_back({seed, su.steps[i], "ema", se.aggregate.series[i]});
    }
    return o;
  });
}

ExperimentResult RunUqCompare(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const Dataset& test = RequireData(parts.test, "data.test",
                                    "uqCompare measures widths on test data");
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  return RunPerSeed(config, [&](uint64_t seed) {
    SeedOutcome o;
    for (double eps : config.uq.epsilons) {
      ExperimentConfig c = config;
      c.privacy = PrivacySpec{};
      c.privacy.rho = EpsilonToZcdp(eps, config.trainer.delta);
      std::vector<RunRecord> pool;
      for (int j = 0; j < config.uq.pool; ++j) {
        pool.push_back(TrainOne(c, parts, *model,
                                DeriveSeed(seed, static_cast<uint64_t>(j)), nullptr));
      }
      for (int k : config.uq.ks) {
        UqConfig uq;
        uq.k = k;
        uq.level = config.uq.level;
        uq.statistic = config.uq.statistic;
        uq.num_test_inputs = config.uq.test_inputs;
        uq.method = UqMethod::kLastKCheckpoints;
        const double ck = UqFromCheckpoints(pool.front(), *model, test, uq).average_width;
        uq.method = UqMethod::kIndependentRuns;
        const double ind =
            UqFromIndependentRuns(pool, *model, test, uq,
                                  DeriveSeed(seed, 0x10000 + static_cast<uint64_t>(k)))
                .average_width;
        const std::string setting = "eps=" + FormatDouble(eps) + " k=" + std::to_string(k);
        o.Put(setting, "checkpoint_width", ck);
        o.Put(setting, "independent_width", ind);
        o.Put(setting, "checkpoint_le_independent", ck <= ind ? 1.0 : 0.0);
      }
    }
    return o;
  });
}

ExperimentResult RunDpldBias(const ExperimentConfig& config) {
  const DpldSpec& d = config.dpld;
  LdConfig base;
  base.sigma = d.sigma;
  base.step_size = d.step_size;
  base.bound_constant = d.bound_constant;
  base.bound_delta = d.bound_delta;
  if (d.model == DpldSpec::Model::kQuadratic) {
    base.model = std::make_shared<QuadraticLoss>(ParameterVector::Zero(d.p));
    base.reference = ParameterVector::Zero(d.p);
  } else {
    const Partitions parts = BuildPartitions(config.data);
    ModelSpec ms = config.model;
    ms.kind = LossKind::kLogistic;
    base.model = BuildModel(ms, *parts.train);
    base.data = parts.train;
    ExcessRiskEvaluator ev(base.model, parts.train, 1e6);
    ev.ComputeMinimizer();
    base.reference = ev.minimizer();
  }
  base.theta_start = base.reference;
  base.theta_start[0] += d.start_distance;

  return RunPerSeed(config, [&](uint64_t seed) {
    SeedOutcome o;
    uint64_t index = 0;
    for (double t1 : d.t1s) {
      for (double gap : d.gaps) {
        CheckpointTimes times;
        times.t1 = t1;
        times.gap = gap;
        times.k = d.k;
        const VarianceBiasReport r =
            Keyed("dpld", [&] {
              return VarianceBiasExperiment(base, times, d.statistic, d.trials,
                                            DeriveSeed(seed, index), d.oracle_samples);
            });
        ++index;
        const std::string setting = "t1=" + FormatDouble(t1) + " gap=" + FormatDouble(gap);
        o.Put(setting, "mean_s", r.mean_s);
        o.Put(setting, "oracle_v", r.oracle_v);
        o.Put(setting, "abs_bias", r.abs_bias);
        o.Put(setting, "bias_se", r.bias_se());
        o.dpld.push_back(r);
      }
    }
    return o;
  });
}

ExperimentResult RunEmaSweep(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const Dataset& test = RequireData(parts.test, "data.test",
                                    "emaSweep scores on test data");
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  return RunPerSeed(config, [&](uint64_t seed) {
    const RunRecord run = TrainOne(config, parts, *model, seed, MetricsSet(parts));
    SeedOutcome o;
    o.Put("last_iterate", "test_accuracy", Accuracy(*model, run.last().params, test));
    std::vector<double> val_acc, test_acc;
    for (double b : config.eval.ema_betas) {
      AggregationSpec s;
      s.kind = AggregationKind::kEma;
      s.beta = b;
      const ParameterVector theta = EmaOverSequence(run.checkpoints, b);
      const std::string name = FormatAggregationSpec(s);
      test_acc.push_back(Accuracy(*model, theta, test));
      o.Put(name, "test_accuracy", test_acc.back());
      if (parts.validation) {
        val_acc.push_back(Accuracy(*model, theta, *parts.validation));
        o.Put(name, "validation_accuracy", val_acc.back());
      }
    }
    if (parts.validation) {
      const size_t best = TuneOnValidation(config.eval.ema_betas, val_acc);
      o.Put("ema:tuned", "test_accuracy", test_acc[best]);
      o.Put("ema:tuned", "resolved_beta", config.eval.ema_betas[best]);
    }
    return o;
  });
}

ExperimentResult RunKSweep(const ExperimentConfig& config) {
  const Partitions parts = BuildPartitions(config.data);
  const Dataset& test = RequireData(parts.test, "data.test",
                                    "kSweep scores on test data");
  const std::shared_ptr<const LossModel> model = BuildModel(config.model, *parts.train);
  return RunPerSeed(config, [&](uint64_t seed) {
    const RunRecord run = TrainOne(config, parts, *model, seed, MetricsSet(parts));
    SeedOutcome o;
    o.Put("last_iterate", "test_accuracy", Accuracy(*model, run.last().params, test));
    const int n = static_cast<int>(run.checkpoints.size());
    for (AggregationKind kind :
         {AggregationKind::kUpaK, AggregationKind::kOpa, AggregationKind::kOmv}) {
      for (int k : FittingKs(config.eval.ks, n)) {
        AggregationSpec s;
        s.kind = kind;
        s.k = k;
        const std::string name = FormatAggregationSpec(s);
        o.Put(name, "test_accuracy",
              AggregateAccuracy(s, run.checkpoints, run.config.steps, *model, test));
        if (parts.validation) {
          o.Put(name, "validation_accuracy",
                AggregateAccuracy(s, run.checkpoints, run.config.steps, *model,
                                  *parts.validation));
        }
      }
    }
    return o;
  });
}

}  // namespace

std::string_view TaskName(Task task) {
  switch (task) {
    case Task::kRiskCompare: return "riskCompare";
    case Task::kAggregateEval: return "aggregateEval";
    case Task::kPdsEval: return "pdsEval";
    case Task::kUqCompare: return "uqCompare";
    case Task::kDpldBias: return "dpldBias";
    case Task::kEmaSweep: return "emaSweep";
    case Task::kKSweep: return "kSweep";
  }
  return "unknown";
}

Task ParseTask(std::string_view name) {
  for (Task t : {Task::kRiskCompare, Task::kAggregateEval, Task::kPdsEval,
                 Task::kUqCompare, Task::kDpldBias, Task::kEmaSweep, Task::kKSweep}) {
    if (TaskName(t) == name) return t;
  }
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

AggregationSpec ParseAggregationSpec(std::string_view text) {
  const auto colon = text.find(':');
  const std::vector<std::string> head = SplitList(text.substr(0, colon), ',');
  if (head.size() != 1) {
    throw InvalidArgument("malformed aggregation '" + std::string(text) + "'");
  }
  AggregationSpec s;
  s.kind = ParseAggregationKind(head.front());
  s.k = 0;
  s.beta = 0.0;
  if (s.kind == AggregationKind::kUpaTail) s.alpha = 0.5;
  if (s.kind == AggregationKind::kPda) s.gamma = 0.0;
  std::set<std::string> given;
  if (colon != std::string_view::npos) {
    for (const std::string& item : SplitList(text.substr(colon + 1), ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw InvalidArgument("aggregation option '" + item + "' has no '='");
      }
      const std::string key = SplitList(item.substr(0, eq)).front();
      const std::string value = item.substr(eq + 1);
      if (!given.insert(key).second) {
        throw InvalidArgument("aggregation option '" + key + "' repeated");
      }
      auto num = [&] {
        try {
          return ParseDoubleValue(key, value);
        } catch (const ConfigError& e) {
          throw InvalidArgument(e.what());
        }
      };
      auto applies = [&](bool ok) {
        if (!ok) {
          throw InvalidArgument("option '" + key + "' does not apply to " +
                                std::string(AggregationKindName(s.kind)));
        }
      };
      if (key == "k") {
        applies(UsesK(s.kind));
        const double v = num();
        if (v != std::floor(v) || v < 0 || v > 1e9) {
          throw InvalidArgument("k must be a nonnegative integer");
        }
        s.k = static_cast<int>(v);
      } else if (key == "alpha") {
        applies(s.kind == AggregationKind::kUpaTail);
        s.alpha = num();
      } else if (key == "gamma") {
        applies(s.kind == AggregationKind::kPda);
        s.gamma = num();
      } else if (key == "beta") {
        applies(s.kind == AggregationKind::kEma || s.kind == AggregationKind::kBestK);
        s.beta = num();
      } else if (key == "inner") {
        applies(s.kind == AggregationKind::kBestK);
        s.inner = ParseAggregationKind(SplitList(value).front());
      } else {
        throw InvalidArgument("unknown aggregation option '" + key + "'");
      }
    }
  }
  if (!UsesK(s.kind)) s.k = 1;
  if (!UsesBeta(s)) {
    if (given.count("beta") != 0) {
      throw InvalidArgument("beta applies to best_k only with inner=ema");
    }
    s.beta = 0.9;
  }
  // Tuned placeholders pass validation once resolved.
  AggregationSpec probe = s;
  if (UsesK(probe.kind) && probe.k == 0) probe.k = 1;
  if (UsesBeta(probe) && probe.beta == 0) probe.beta = 0.5;
  probe.Validate();
  return s;
}

std::string FormatAggregationSpec(const AggregationSpec& s) {
  std::string out(AggregationKindName(s.kind));
  switch (s.kind) {
    case AggregationKind::kEma:
      return out + ":beta=" + FormatDouble(s.beta);
    case AggregationKind::kUpaTail:
      return out + ":alpha=" + FormatDouble(s.alpha);
    case AggregationKind::kPda:
      return out + ":gamma=" + FormatDouble(s.gamma);
    case AggregationKind::kUpaK:
    case AggregationKind::kOpa:
    case AggregationKind::kOmv:
      return out + ":k=" + std::to_string(s.k);
    case AggregationKind::kBestK:
      out += ":k=" + std::to_string(s.k) + ",inner=" +
             std::string(AggregationKindName(s.inner));
      if (s.inner == AggregationKind::kEma) out += ",beta=" + FormatDouble(s.beta);
      return out;
  }
  return out;
}

ExperimentConfig ParseExperimentConfig(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.task = Keyed("task", [&] { return ParseTask(kv.GetString("task", "aggregateEval")); });

  {
    std::vector<uint64_t> def;
    switch (c.task) {
      case Task::kRiskCompare: def = SeedRange(1, 20); break;
      case Task::kUqCompare: def = SeedRange(1, 10); break;
      case Task::kDpldBias: def = SeedRange(1, 1); break;
      default: def = SeedRange(1, 5); break;
    }
    std::vector<int64_t> def_signed(def.begin(), def.end());
    std::set<int64_t> distinct;
    for (int64_t s : kv.GetIntList("seeds", def_signed)) {
      Require(s >= 0, "seeds", "seeds must be nonnegative");
      Require(distinct.insert(s).second, "seeds", "seeds must be distinct");
      c.seeds.push_back(static_cast<uint64_t>(s));
    }
  }
  c.workers = ToInt("workers", kv.GetInt("workers", 1));
  Require(c.workers >= 1, "workers", "need at least one worker");

  // Data.
  DataSpec& d = c.data;
  const std::string source = kv.GetString("data.source", "synthetic");
  Require(source == "synthetic" || source == "csv", "data.source",
          "expected synthetic or csv");
  d.source = source == "csv" ? DataSpec::Source::kCsv : DataSpec::Source::kSynthetic;
  d.n = ToInt("data.n", kv.GetInt("data.n", d.n));
  d.p = ToInt("data.p", kv.GetInt("data.p", d.p));
  d.classes = ToInt("data.classes", kv.GetInt("data.classes", d.classes));
  d.separation = kv.GetDouble("data.separation", d.separation);
  const int64_t data_seed = kv.GetInt("data.seed", 0);
  Require(data_seed >= 0, "data.seed", "must be nonnegative");
  d.seed = static_cast<uint64_t>(data_seed);
  const bool split_default = c.task != Task::kRiskCompare && c.task != Task::kDpldBias;
  d.validation = ToInt("data.validation",
                       kv.GetInt("data.validation", split_default ? 1000 : 0));
  d.heldout = ToInt("data.heldout", kv.GetInt("data.heldout", 0));
  d.test = ToInt("data.test", kv.GetInt("data.test", split_default ? 1000 : 0));
  d.train_csv = kv.GetString("data.train_csv", "");
  d.validation_csv = kv.GetString("data.validation_csv", "");
  d.heldout_csv = kv.GetString("data.heldout_csv", "");
  d.test_csv = kv.GetString("data.test_csv", "");
  Require(d.n >= 1, "data.n", "must be positive");
  Require(d.p >= 1, "data.p", "must be positive");
  Require(d.classes >= 2, "data.classes", "need at least two classes");
  Require(d.separation >= 0, "data.separation", "must be nonnegative");
  Require(d.validation >= 0, "data.validation", "must be nonnegative");
  Require(d.heldout >= 0, "data.heldout", "must be nonnegative");
  Require(d.test >= 0, "data.test", "must be nonnegative");
  if (d.source == DataSpec::Source::kCsv) {
    Require(!d.train_csv.empty(), "data.train_csv", "csv source needs a training file");
  }

  // Model.
  ModelSpec& m = c.model;
  m.kind = Keyed("model.kind", [&] {
    return ParseLossKind(kv.GetString("model.kind", "logistic"));
  });
  m.l2 = kv.GetDouble("model.l2", m.l2);
  m.hidden = ToInt("model.hidden", kv.GetInt("model.hidden", m.hidden));
  m.lipschitz = kv.GetDouble("model.lipschitz", m.lipschitz);
  m.smoothness = kv.GetDouble("model.smoothness", m.smoothness);
  m.dimension = ToInt("model.dimension", kv.GetInt("model.dimension", m.dimension));
  Require(m.l2 >= 0, "model.l2", "must be nonnegative");
  Require(m.hidden >= 1, "model.hidden", "must be positive");
  Require(m.lipschitz > 0, "model.lipschitz", "must be positive");
  Require(m.smoothness > 0, "model.smoothness", "must be positive");
  Require(m.dimension >= 1, "model.dimension", "must be positive");

  // Trainer.
  TrainerConfig& t = c.trainer;
  const std::string mode = kv.GetString(
      "train.mode", c.task == Task::kRiskCompare ? "theoretical" : "practical");
  Require(mode == "theoretical" || mode == "practical", "train.mode",
          "expected theoretical or practical");
  t.mode = mode == "theoretical" ? TrainerMode::kTheoretical : TrainerMode::kPractical;
  const bool theo = t.mode == TrainerMode::kTheoretical;
  t.steps = kv.GetInt("train.steps", 0);
  Require(t.steps >= 0, "train.steps", "must be nonnegative (0 selects ceil(n rho))");
  t.eta.kind = Keyed("train.eta", [&] {
    return ParseScheduleKind(
        kv.GetString("train.eta", theo ? "theorem_default" : "constant"));
  });
  t.eta.scale = kv.GetDouble("train.eta_scale", 0.1);
  Require(t.eta.kind == StepSchedule::Kind::kTheoremDefault || t.eta.scale > 0,
          "train.eta_scale", "must be positive");
  Require(theo || t.eta.kind != StepSchedule::Kind::kTheoremDefault, "train.eta",
          "theorem_default needs train.mode = theoretical");
  t.projection_radius = kv.GetDouble(
      "train.radius", theo ? 1.0 : std::numeric_limits<double>::infinity());
  Require(t.projection_radius > 0, "train.radius", "must be positive");
  Require(!theo || std::isfinite(t.projection_radius), "train.radius",
          "theoretical mode needs a finite radius");
  t.clip_norm = kv.GetDouble("train.clip_norm", t.clip_norm);
  Require(t.clip_norm > 0, "train.clip_norm", "must be positive");
  t.batch_size = ToInt("train.batch_size", kv.GetInt("train.batch_size", t.batch_size));
  Require(t.batch_size >= 1, "train.batch_size", "must be positive");
  t.checkpoint_every = kv.GetInt("train.checkpoint_every", 0);
  Require(t.checkpoint_every >= 0, "train.checkpoint_every", "must be nonnegative");
  t.delta = kv.GetDouble("train.delta", t.delta);
  Require(t.delta > 0 && t.delta < 1, "train.delta", "must lie in (0, 1)");

  // Privacy.
  PrivacySpec& pr = c.privacy;
  Require(!(kv.Has("privacy.rho") && kv.Has("privacy.epsilon")), "privacy.epsilon",
          "give at most one of privacy.rho and privacy.epsilon");
  if (kv.Has("privacy.rho")) pr.rho = kv.GetDouble("privacy.rho", 0.0);
  if (kv.Has("privacy.epsilon")) pr.epsilon = kv.GetDouble("privacy.epsilon", 0.0);
  if (kv.Has("privacy.noise_multiplier")) {
    pr.noise_multiplier = kv.GetDouble("privacy.noise_multiplier", 0.0);
  }
  Require(!pr.rho || *pr.rho > 0, "privacy.rho", "must be positive");
  Require(!pr.epsilon || *pr.epsilon > 0, "privacy.epsilon", "must be positive");
  Require(!pr.noise_multiplier || *pr.noise_multiplier >= 0,
          "privacy.noise_multiplier", "must be nonnegative");
  Require(!pr.noise_multiplier || !theo, "privacy.noise_multiplier",
          "applies to practical mode only");

  // Periodic distribution shift.
  c.pds.enabled = kv.GetBool("pds.enabled", c.task == Task::kPdsEval);
  c.pds.period = kv.GetInt("pds.period", 0);
  Require(c.pds.period >= 0, "pds.period", "must be nonnegative (0 selects steps / 8)");
  Require(!c.pds.enabled || !theo, "pds.enabled", "needs train.mode = practical");

  // Aggregations.
  if (const auto specs = kv.Find("aggregate.specs")) {
    for (const std::string& item : SplitList(*specs, ';')) {
      c.aggregations.push_back(
          Keyed("aggregate.specs", [&] { return ParseAggregationSpec(item); }));
    }
  } else if (c.task == Task::kAggregateEval) {
    for (const char* s : {"upa_k:k=0", "ema:beta=0", "opa:k=0", "omv:k=0"}) {
      c.aggregations.push_back(ParseAggregationSpec(s));
    }
  }

  // Evaluation.
  EvalSpec& e = c.eval;
  e.window_fraction = kv.GetDouble("eval.window", e.window_fraction);
  Require(e.window_fraction > 0 && e.window_fraction <= 1, "eval.window",
          "must lie in (0, 1]");
  std::vector<double> betas = kLiteralBetas;
  if (c.task != Task::kEmaSweep) {
    betas.insert(betas.end(), kComplementBetas.begin(), kComplementBetas.end());
  }
  e.ema_betas = kv.GetDoubleList("eval.ema_betas", betas);
  for (double b : e.ema_betas) {
    Require(b > 0 && b <= 1, "eval.ema_betas", "every beta must lie in (0, 1]");
  }
  for (int64_t k : kv.GetIntList("eval.ks", kDefaultKs)) {
    Require(k >= 1, "eval.ks", "every k must be positive");
    e.ks.push_back(ToInt("eval.ks", k));
  }
  e.risk_alpha = kv.GetDouble("eval.risk_alpha", e.risk_alpha);
  Require(e.risk_alpha > 0 && e.risk_alpha <= 1, "eval.risk_alpha", "must lie in (0, 1]");
  e.risk_gamma = kv.GetDouble("eval.risk_gamma", e.risk_gamma);
  Require(e.risk_gamma >= 0, "eval.risk_gamma", "must be nonnegative");

  // Uncertainty.
  UqSpec& u = c.uq;
  u.method = Keyed("uq.method", [&] {
    return ParseUqMethod(kv.GetString("uq.method", "last_k_checkpoints"));
  });
  u.ks.clear();
  const std::vector<int64_t> uq_ks_def =
      c.task == Task::kUqCompare ? std::vector<int64_t>{3, 5, 10} : std::vector<int64_t>{5};
  for (int64_t k : kv.GetIntList("uq.ks", uq_ks_def)) {
    Require(k >= 2, "uq.ks", "every k must be at least 2");
    u.ks.push_back(ToInt("uq.ks", k));
  }
  u.level = kv.GetDouble("uq.level", u.level);
  Require(u.level > 0 && u.level < 1, "uq.level", "must lie in (0, 1)");
  u.statistic = Keyed("uq.statistic", [&] {
    return ParseStatisticMode(kv.GetString("uq.statistic", "modal_class_probability"));
  });
  u.pool = ToInt("uq.pool", kv.GetInt("uq.pool", u.pool));
  Require(u.pool >= *std::max_element(u.ks.begin(), u.ks.end()), "uq.pool",
          "pool must hold at least max(uq.ks) runs");
  u.test_inputs = ToInt("uq.test_inputs", kv.GetInt("uq.test_inputs", 0));
  Require(u.test_inputs >= 0, "uq.test_inputs", "must be nonnegative");
  u.epsilons = kv.GetDoubleList("uq.epsilons", u.epsilons);
  for (double eps : u.epsilons) {
    Require(eps > 0 && std::isfinite(eps), "uq.epsilons", "every epsilon must be positive");
  }

  // Langevin simulation.
  DpldSpec& l = c.dpld;
  const std::string ld_model = kv.GetString("dpld.model", "quadratic");
  Require(ld_model == "quadratic" || ld_model == "logistic", "dpld.model",
          "expected quadratic or logistic");
  l.model = ld_model == "logistic" ? DpldSpec::Model::kLogistic
                                   : DpldSpec::Model::kQuadratic;
  l.p = ToInt("dpld.p", kv.GetInt("dpld.p", l.p));
  l.sigma = kv.GetDouble("dpld.sigma", l.sigma);
  l.k = ToInt("dpld.k", kv.GetInt("dpld.k", l.k));
  l.trials = kv.GetInt("dpld.trials", l.trials);
  l.statistic = Keyed("dpld.statistic", [&] {
    return ParseLdStatistic(kv.GetString("dpld.statistic", "clamped_first"));
  });
  l.start_distance = kv.GetDouble("dpld.start_distance", l.start_distance);
  l.step_size = kv.GetDouble("dpld.step_size", l.step_size);
  l.t1s = kv.GetDoubleList("dpld.t1s", l.t1s);
  l.gaps = kv.GetDoubleList("dpld.gaps", l.gaps);
  l.oracle_samples = kv.GetInt("dpld.oracle_samples", l.oracle_samples);
  l.bound_constant = kv.GetDouble("dpld.bound_constant", l.bound_constant);
  l.bound_delta = kv.GetDouble("dpld.bound_delta", l.bound_delta);
  Require(l.p >= 1, "dpld.p", "must be positive");
  Require(l.sigma > 0, "dpld.sigma", "must be positive");
  Require(l.k >= 2, "dpld.k", "need at least two checkpoints");
  Require(l.trials >= 100, "dpld.trials", "need at least 100 trials");
  Require(l.step_size > 0, "dpld.step_size", "must be positive");
  for (double v : l.t1s) Require(v > 0, "dpld.t1s", "every t1 must be positive");
  for (double v : l.gaps) Require(v >= 0, "dpld.gaps", "every gap must be nonnegative");
  Require(l.oracle_samples >= 2, "dpld.oracle_samples", "need at least two samples");
  Require(l.bound_constant > 0, "dpld.bound_constant", "must be positive");
  Require(l.bound_delta > 0 && l.bound_delta < 1, "dpld.bound_delta",
          "must lie in (0, 1)");
  Require(l.model == DpldSpec::Model::kQuadratic || m.l2 > 0, "model.l2",
          "logistic Langevin runs need a strongly convex loss");

  kv.RejectUnused();
  return c;
}

KeyValueConfig ExperimentConfigToKeyValues(const ExperimentConfig& c) {
  KeyValueConfig kv;
  kv.Set("task", std::string(TaskName(c.task)));
  kv.Set("seeds", JoinInts(c.seeds));
  kv.Set("workers", std::to_string(c.workers));

  const DataSpec& d = c.data;
  kv.Set("data.source", d.source == DataSpec::Source::kCsv ? "csv" : "synthetic");
  kv.Set("data.n", std::to_string(d.n));
  kv.Set("data.p", std::to_string(d.p));
  kv.Set("data.classes", std::to_string(d.classes));
  kv.Set("data.separation", FormatDouble(d.separation));
  kv.Set("data.seed", std::to_string(d.seed));
  kv.Set("data.validation", std::to_string(d.validation));
  kv.Set("data.heldout", std::to_string(d.heldout));
  kv.Set("data.test", std::to_string(d.test));
  kv.Set("data.train_csv", d.train_csv);
  kv.Set("data.validation_csv", d.validation_csv);
  kv.Set("data.heldout_csv", d.heldout_csv);
  kv.Set("data.test_csv", d.test_csv);

  kv.Set("model.kind", std::string(LossKindName(c.model.kind)));
  kv.Set("model.l2", FormatDouble(c.model.l2));
  kv.Set("model.hidden", std::to_string(c.model.hidden));
  kv.Set("model.lipschitz", FormatDouble(c.model.lipschitz));
  kv.Set("model.smoothness", FormatDouble(c.model.smoothness));
  kv.Set("model.dimension", std::to_string(c.model.dimension));

  const TrainerConfig& t = c.trainer;
  kv.Set("train.mode", std::string(TrainerModeName(t.mode)));
  kv.Set("train.steps", std::to_string(t.steps));
  kv.Set("train.eta", std::string(StepScheduleKindName(t.eta.kind)));
  kv.Set("train.eta_scale", FormatDouble(t.eta.scale));
  kv.Set("train.radius", FormatDouble(t.projection_radius));
  kv.Set("train.clip_norm", FormatDouble(t.clip_norm));
  kv.Set("train.batch_size", std::to_string(t.batch_size));
  kv.Set("train.checkpoint_every", std::to_string(t.checkpoint_every));
  kv.Set("train.delta", FormatDouble(t.delta));

  if (c.privacy.rho) kv.Set("privacy.rho", FormatDouble(*c.privacy.rho));
  if (c.privacy.epsilon) kv.Set("privacy.epsilon", FormatDouble(*c.privacy.epsilon));
  if (c.privacy.noise_multiplier) {
    kv.Set("privacy.noise_multiplier", FormatDouble(*c.privacy.noise_multiplier));
  }
  kv.Set("pds.enabled", c.pds.enabled ? "true" : "false");
  kv.Set("pds.period", std::to_string(c.pds.period));

  std::string specs;
  for (size_t i = 0; i < c.aggregations.size(); ++i) {
    if (i > 0) specs += "; ";
    specs += FormatAggregationSpec(c.aggregations[i]);
  }
  kv.Set("aggregate.specs", specs);

  kv.Set("eval.window", FormatDouble(c.eval.window_fraction));
  kv.Set("eval.ema_betas", JoinDoubles(c.eval.ema_betas));
  kv.Set("eval.ks", JoinInts(c.eval.ks));
  kv.Set("eval.risk_alpha", FormatDouble(c.eval.risk_alpha));
  kv.Set("eval.risk_gamma", FormatDouble(c.eval.risk_gamma));

  kv.Set("uq.method", std::string(UqMethodName(c.uq.method)));
  kv.Set("uq.ks", JoinInts(c.uq.ks));
  kv.Set("uq.level", FormatDouble(c.uq.level));
  kv.Set("uq.statistic", std::string(StatisticModeName(c.uq.statistic)));
  kv.Set("uq.pool", std::to_string(c.uq.pool));
  kv.Set("uq.test_inputs", std::to_string(c.uq.test_inputs));
  kv.Set("uq.epsilons", JoinDoubles(c.uq.epsilons));

  const DpldSpec& l = c.dpld;
  kv.Set("dpld.model", l.model == DpldSpec::Model::kLogistic ? "logistic" : "quadratic");
  kv.Set("dpld.p", std::to_string(l.p));
  kv.Set("dpld.sigma", FormatDouble(l.sigma));
  kv.Set("dpld.k", std::to_string(l.k));
  kv.Set("dpld.trials", std::to_string(l.trials));
  kv.Set("dpld.statistic", std::string(LdStatisticName(l.statistic)));
  kv.Set("dpld.start_distance", FormatDouble(l.start_distance));
  kv.Set("dpld.step_size", FormatDouble(l.step_size));
  kv.Set("dpld.t1s", JoinDoubles(l.t1s));
  kv.Set("dpld.gaps", JoinDoubles(l.gaps));
  kv.Set("dpld.oracle_samples", std::to_string(l.oracle_samples));
  kv.Set("dpld.bound_constant", FormatDouble(l.bound_constant));
  kv.Set("dpld.bound_delta", FormatDouble(l.bound_delta));
  return kv;
}

void CheckDisjointPartitions(const Partitions& parts, const DataSpec& spec) {
  struct Slot {
    const char* name;
    const Dataset* data;
    Partition tag;
    const std::string* path;
  };
  const Slot slots[] = {
      {"train", parts.train.get(), Partition::kTrain, &spec.train_csv},
      {"validation", parts.validation.get(), Partition::kValidation, &spec.validation_csv},
      {"heldout", parts.heldout.get(), Partition::kHeldout, &spec.heldout_csv},
      {"test", parts.test.get(), Partition::kTest, &spec.test_csv},
  };
  Require(parts.train != nullptr, "data", "no training partition");
  for (const Slot& s : slots) {
    if (s.data == nullptr) continue;
    Require(s.data->partition() == s.tag, std::string("data.") + s.name,
            "partition is tagged " + std::string(PartitionName(s.data->partition())));
    Require(s.data->p() == parts.train->p() &&
                s.data->num_classes() == parts.train->num_classes(),
            std::string("data.") + s.name,
            "feature dimension or class count differs from training data");
  }
  if (spec.source != DataSpec::Source::kCsv) return;
  auto canonical = [](const std::string& p) {
    std::error_code ec;
    const auto c = std::filesystem::weakly_canonical(p, ec);
    return ec ? std::filesystem::path(p).lexically_normal().string() : c.string();
  };
  for (size_t i = 0; i < std::size(slots); ++i) {
    if (slots[i].path->empty()) continue;
    for (size_t j = i + 1; j < std::size(slots); ++j) {
      if (slots[j].path->empty()) continue;
      Require(canonical(*slots[i].path) != canonical(*slots[j].path),
              std::string("data.") + slots[j].name + "_csv",
              std::string("same file as data.") + slots[i].name + "_csv");
    }
  }
}

Partitions BuildPartitions(const DataSpec& spec) {
  Partitions parts;
  if (spec.source == DataSpec::Source::kCsv) {
    auto load = [&](const std::string& path, Partition tag)
        -> std::shared_ptr<const Dataset> {
      if (path.empty()) return nullptr;
      return std::make_shared<const Dataset>(
          Keyed("data", [&] { return LoadCsv(path, spec.classes); }).WithPartition(tag));
    };
    parts.train = load(spec.train_csv, Partition::kTrain);
    parts.validation = load(spec.validation_csv, Partition::kValidation);
    parts.heldout = load(spec.heldout_csv, Partition::kHeldout);
    parts.test = load(spec.test_csv, Partition::kTest);
  } else {
    std::vector<int> sizes;
    std::vector<Partition> tags;
    std::vector<std::shared_ptr<const Dataset>*> dest;
    auto add = [&](int size, Partition tag, std::shared_ptr<const Dataset>* out) {
      if (size <= 0) return;
      sizes.push_back(size);
      tags.push_back(tag);
      dest.push_back(out);
    };
    add(spec.n, Partition::kTrain, &parts.train);
    add(spec.validation, Partition::kValidation, &parts.validation);
    add(spec.heldout, Partition::kHeldout, &parts.heldout);
    add(spec.test, Partition::kTest, &parts.test);
    const int64_t total = std::accumulate(sizes.begin(), sizes.end(), int64_t{0});
    Require(total <= std::numeric_limits<int>::max(), "data.n", "too many rows");
    const Dataset all = SynthClassification(static_cast<int>(total), spec.p,
                                            spec.classes, spec.separation, spec.seed);
    std::vector<Dataset> pieces =
        SplitDataset(all, sizes, tags, DeriveSeed(spec.seed, 1));
    for (size_t i = 0; i < pieces.size(); ++i) {
      *dest[i] = std::make_shared<const Dataset>(std::move(pieces[i]));
    }
  }
  CheckDisjointPartitions(parts, spec);
  return parts;
}

std::shared_ptr<const LossModel> BuildModel(const ModelSpec& spec,
                                            const Dataset& train) {
  switch (spec.kind) {
    case LossKind::kQuadratic:
      return std::make_shared<QuadraticLoss>(ParameterVector::Zero(spec.dimension));
    case LossKind::kLogistic:
      return std::make_shared<LogisticLoss>(train.p(), train.num_classes(), spec.l2);
    case LossKind::kTinyMlp: {
      TinyMlpLoss::Options o;
      o.feature_dim = train.p();
      o.hidden = spec.hidden;
      o.num_classes = train.num_classes();
      o.l2 = spec.l2;
      o.lipschitz = spec.lipschitz;
      o.smoothness = spec.smoothness;
      return std::make_shared<TinyMlpLoss>(o);
    }
  }
  throw ConfigError("model.kind", "unknown model");
}

double ResolveRho(const PrivacySpec& privacy, double delta) {
  if (privacy.rho) return *privacy.rho;
  if (privacy.epsilon) return EpsilonToZcdp(*privacy.epsilon, delta);
  return 0.5;
}

RunRecord TrainOne(const ExperimentConfig& config, const Partitions& parts,
                   const LossModel& model, uint64_t seed, const Dataset* eval) {
  const Dataset& train = *parts.train;
  TrainerConfig tc = config.trainer;
  tc.seed = seed;
  const double rho = ResolveRho(config.privacy, tc.delta);
  const bool noiseless = std::isinf(rho);
  if (tc.steps == 0) {
    Require(!noiseless, "train.steps", "a noiseless run needs an explicit step count");
    tc.steps = ChooseSteps(train.n(), rho);
  }
  if (config.pds.enabled) {
    const int64_t period =
        config.pds.period > 0 ? config.pds.period : std::max<int64_t>(1, tc.steps / 8);
    Dataset a = FilterByLabel(train, [](int y) { return y % 2 == 0; });
    Dataset b = FilterByLabel(train, [](int y) { return y % 2 == 1; });
    Require(a.n() > 0 && b.n() > 0, "pds.enabled",
            "both even-label and odd-label sources need examples");
    tc.diurnal = std::make_shared<const DiurnalSchedule>(period, std::move(a), std::move(b));
  }
  return Keyed("train", [&] {
    if (tc.mode == TrainerMode::kTheoretical) {
      if (noiseless) tc.noise_variance_override = 0.0;
      return DpSgdTheoretical(model, train, tc, noiseless ? 1.0 : rho, eval);
    }
    double z = 0.0;
    if (config.privacy.noise_multiplier) {
      z = *config.privacy.noise_multiplier;
    } else if (!noiseless) {
      z = NoiseMultiplierForBudget(rho, tc.steps);
    }
    return DpSgdPractical(model, train, tc, z, eval);
  });
}

size_t TuneOnValidation(std::span<const double> candidates,
                        std::span<const double> accuracies) {
  if (candidates.empty()) throw InvalidArgument("no candidates to tune over");
  if (candidates.size() != accuracies.size()) {
    throw InvalidArgument("one accuracy per candidate is required");
  }
  size_t best = 0;
  for (size_t i = 1; i < candidates.size(); ++i) {
    if (accuracies[i] > accuracies[best] ||
        (accuracies[i] == accuracies[best] && candidates[i] < candidates[best])) {
      best = i;
    }
  }
  return best;
}

WindowStats SummarizeSeries(std::span<const double> values) {
  if (values.size() < 2) {
    throw InvalidArgument("a spread needs at least two values");
  }
  WindowStats w;
  w.series.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  w.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - w.mean) * (v - w.mean);
  w.std = std::sqrt(ss / (n - 1.0));
  return w;
}

StabilityResult StabilityReport(const RunRecord& run, const AggregationSpec& spec,
                                const LossModel& model, const Dataset& eval,
                                int window) {
  spec.Validate();
  const int n = static_cast<int>(run.checkpoints.size());
  if (window < 2) throw InvalidArgument("stability window must be at least 2");
  if (window > n) {
    throw InvalidArgument("stability window " + std::to_string(window) +
                          " exceeds " + std::to_string(n) + " checkpoints");
  }
  const int first = n - window;
  std::span<const Checkpoint> ck(run.checkpoints);
  std::vector<double> base, agg;
  StabilityResult r;

  // Running states for the recursive aggregates; identical to refolding the
  // prefix at every checkpoint.
  std::optional<EmaState> ema;
  std::optional<PdaState> pda;
  if (spec.kind == AggregationKind::kEma) ema.emplace(ck[0].params, spec.beta);
  if (spec.kind == AggregationKind::kPda) pda.emplace(spec.gamma);
  for (int i = 0; i < n; ++i) {
    if (ema && i > 0) ema->Update(ck[i].params, i);
    if (pda) pda->Update(ck[i].params, i + 1);
    if (i < first) continue;
    r.steps.push_back(ck[i].step);
    base.push_back(Accuracy(model, ck[i].params, eval));
    if (ema) {
      agg.push_back(Accuracy(model, ema->current(), eval));
    } else if (pda) {
      agg.push_back(Accuracy(model, pda->current(), eval));
    } else {
      agg.push_back(AggregateAccuracy(spec, ck.first(i + 1), ck[i].step, model, eval));
    }
  }
  r.baseline = SummarizeSeries(base);
  r.aggregate = SummarizeSeries(agg);
  return r;
}

AggregateResult EvaluateAggregate(const AggregationSpec& spec, const RunRecord& run,
                                  const LossModel& model, const Partitions& parts,
                                  const EvalSpec& eval) {
  AggregateResult r;
  r.requested = spec;
  r.resolved = spec;
  const Dataset& test = RequireData(parts.test, "data.test", "aggregation needs test data");
  const Dataset* heldout = parts.heldout.get();
  if (spec.kind == AggregationKind::kBestK) {
    RequireData(parts.heldout, "data.heldout", "best_k ranks checkpoints on held-out data");
  }
  const bool tune_k = UsesK(spec.kind) && spec.k == 0;
  const bool tune_beta = UsesBeta(spec) && spec.beta == 0;
  const std::span<const Checkpoint> ck(run.checkpoints);
  const int64_t steps = run.config.steps;

  if (tune_k || tune_beta) {
    const Dataset& val = RequireData(parts.validation, "data.validation",
                                     "tuned aggregations need validation data");
    if (val.partition() != Partition::kValidation) {
      throw ConfigError("data.validation", "tuning data is not tagged validation");
    }
    std::vector<int> ks{spec.k};
    if (tune_k) {
      ks = FittingKs(eval.ks, static_cast<int>(ck.size()));
      Require(!ks.empty(), "eval.ks", "no candidate k fits the checkpoint count");
    }
    std::vector<double> betas{spec.beta};
    if (tune_beta) betas = eval.ema_betas;
    // Lexicographic scan: ties keep the smaller k, then the smaller beta.
    double best_acc = -1.0;
    for (int k : ks) {
      std::vector<double> accs;
      for (double b : betas) {
        AggregationSpec s = spec;
        s.k = k;
        s.beta = b;
        accs.push_back(AggregateAccuracy(s, ck, steps, model, val, heldout));
      }
      const size_t j = TuneOnValidation(betas, accs);
      if (accs[j] > best_acc) {
        best_acc = accs[j];
        r.resolved.k = k;
        r.resolved.beta = betas[j];
      }
    }
  }
  Keyed("aggregate.specs", [&] { r.resolved.Validate(); });
  r.test_accuracy = AggregateAccuracy(r.resolved, ck, steps, model, test, heldout);
  r.validation_accuracy =
      parts.validation
          ? AggregateAccuracy(r.resolved, ck, steps, model, *parts.validation, heldout)
          : kNaN;
  return r;
}

void ResultTable::Add(const std::string& setting, const std::string& metric,
                      std::vector<double> values, int num_diverged) {
  ResultRow row;
  row.setting = setting;
  row.metric = metric;
  row.num_seeds = static_cast<int>(values.size());
  row.num_diverged = num_diverged;
  if (values.empty()) {
    row.mean = kNaN;
    row.std = kNaN;
  } else if (values.size() == 1) {
    row.mean = values.front();
    row.std = kNaN;
  } else {
    const WindowStats w = SummarizeSeries(values);
    row.mean = w.mean;
    row.std = w.std;
  }
  rows.push_back(row);
  per_seed[setting + "|" + metric] = std::move(values);
}

const ResultRow& ResultTable::Find(const std::string& setting,
                                   const std::string& metric) const {
  for (const ResultRow& r : rows) {
    if (r.setting == setting && r.metric == metric) return r;
  }
  throw InvalidArgument("no result row " + setting + " / " + metric);
}

ExperimentResult RunExperiment(const ExperimentConfig& config) {
  Require(!config.seeds.empty(), "seeds", "need at least one seed");
  switch (config.task) {
    case Task::kRiskCompare: return RunRiskCompare(config);
    case Task::kAggregateEval: return RunAggregateEval(config);
    case Task::kPdsEval: return RunPdsEval(config);
    case Task::kUqCompare: return RunUqCompare(config);
    case Task::kDpldBias: return RunDpldBias(config);
    case Task::kEmaSweep: return RunEmaSweep(config);
    case Task::kKSweep: return RunKSweep(config);
  }
  throw ConfigError("task", "unknown task");
}

}  // namespace dpckpt
