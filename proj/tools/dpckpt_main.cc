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

// dpckpt command-line entry point.
//
// Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpckpt/config.h"
#include "dpckpt/errors.h"
#include "dpckpt/harness.h"
#include "dpckpt/privacy.h"
#include "dpckpt/rng.h"
#include "dpckpt/run_io.h"

namespace dpckpt {
namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<int64_t> seed;
  std::optional<int> workers;
};

void AddCommon(CLI::App* cmd, CommonFlags& f, bool out_required) {
  cmd->add_option("--config", f.config, "key = value experiment config");
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", f.seed, "run a single seed instead of the config's list");
  cmd->add_option("--workers", f.workers, "parallel workers")->check(CLI::PositiveNumber);
}

KeyValueConfig LoadKv(const CommonFlags& f) {
  KeyValueConfig kv = f.config.empty() ? KeyValueConfig() : KeyValueConfig::Load(f.config);
  if (f.seed) {
    if (*f.seed < 0) throw ConfigError("--seed", "must be nonnegative");
    kv.Set("seeds", std::to_string(*f.seed));
  }
  if (f.workers) kv.Set("workers", std::to_string(*f.workers));
  return kv;
}

// Keys of `overlay` replace those of `base`.
KeyValueConfig Overlay(const KeyValueConfig& base, const KeyValueConfig& overlay) {
  KeyValueConfig out = base;
  for (const auto& [k, v] : overlay.entries()) out.Set(k, v);
  return out;
}

KeyValueConfig EchoForSeed(const ExperimentConfig& config, uint64_t seed) {
  ExperimentConfig c = config;
  c.seeds = {seed};
  return ExperimentConfigToKeyValues(c);
}

void WriteSweepManifest(const std::string& dir, const ExperimentConfig& config) {
  nlohmann::json m;
  const double rho = ResolveRho(config.privacy, config.trainer.delta);
  const PrivacyBudget b = PrivacyBudget::FromRho(rho, config.trainer.delta);
  m["rho"] = std::isfinite(b.rho) ? nlohmann::json(b.rho) : nlohmann::json(nullptr);
  m["delta"] = b.delta;
  m["epsilon"] =
      std::isfinite(b.epsilon) ? nlohmann::json(b.epsilon) : nlohmann::json(nullptr);
  m["noiseless"] = !std::isfinite(rho);
  m["task"] = std::string(TaskName(config.task));
  m["seeds"] = config.seeds;
  m["config"] = ExperimentConfigToKeyValues(config).entries();
  m["timestamp"] = CurrentTimestamp();
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) throw IoError("cannot write '" + dir + "/manifest.json'");
}

void MakeDir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

int CmdTrain(const CommonFlags& f) {
  const ExperimentConfig config = ParseExperimentConfig(LoadKv(f));
  const Partitions parts = BuildPartitions(config.data);
  const auto model = BuildModel(config.model, *parts.train);
  const Dataset* eval = parts.validation ? parts.validation.get() : parts.test.get();
  const bool many = config.seeds.size() > 1;
  const std::string timestamp = CurrentTimestamp();
  auto runs = ParallelMapTolerant<RunRecord>(
      static_cast<int>(config.seeds.size()), config.workers,
      [&](int i) { return TrainOne(config, parts, *model, config.seeds[i], eval); });
  int diverged = 0;
  for (size_t i = 0; i < runs.size(); ++i) {
    const uint64_t seed = config.seeds[i];
    if (!runs[i]) {
      std::cerr << "seed " << seed << ": training diverged\n";
      ++diverged;
      continue;
    }
    const std::string dir = many ? f.out + "/run_" + std::to_string(seed) : f.out;
    WriteRunDirectory(dir, *runs[i], EchoForSeed(config, seed), timestamp);
    std::cout << dir << ": " << runs[i]->checkpoints.size() << " checkpoints, rho="
              << FormatDouble(runs[i]->budget.rho)
              << " epsilon=" << FormatDouble(runs[i]->budget.epsilon) << "\n";
  }
  return diverged > 0 ? kExitDivergence : kExitOk;
}

int CmdAggregate(const CommonFlags& f) {
  const LoadedRun loaded = ReadRunDirectory(f.out);
  KeyValueConfig kv = loaded.config;
  if (!f.config.empty()) kv = Overlay(kv, KeyValueConfig::Load(f.config));
  ExperimentConfig config = ParseExperimentConfig(kv);
  if (config.aggregations.empty()) {
    for (const char* s : {"upa_k:k=0", "ema:beta=0", "opa:k=0", "omv:k=0"}) {
      config.aggregations.push_back(ParseAggregationSpec(s));
    }
  }
  const Partitions parts = BuildPartitions(config.data);
  const auto model = BuildModel(config.model, *parts.train);
  std::vector<AggregateResult> results;
  for (const AggregationSpec& spec : config.aggregations) {
    results.push_back(EvaluateAggregate(spec, loaded.run, *model, parts, config.eval));
    std::cout << FormatAggregationSpec(results.back().resolved)
              << " accuracy=" << FormatDouble(results.back().test_accuracy) << "\n";
  }
  WriteAggregatesJson(f.out + "/aggregates.json", results);
  return kExitOk;
}

int CmdUq(const CommonFlags& f) {
  MakeDir(f.out);
  const bool have_run = fs::exists(f.out + "/manifest.json");
  std::optional<LoadedRun> loaded;
  KeyValueConfig kv = LoadKv(f);
  if (have_run) {
    loaded = ReadRunDirectory(f.out);
    kv = Overlay(loaded->config, kv);
  }
  const ExperimentConfig config = ParseExperimentConfig(kv);
  const Partitions parts = BuildPartitions(config.data);
  if (!parts.test) throw ConfigError("data.test", "uncertainty is measured on test data");
  const auto model = BuildModel(config.model, *parts.train);
  const uint64_t seed = config.seeds.front();

  std::vector<RunRecord> pool;
  if (config.uq.method == UqMethod::kLastKCheckpoints) {
    pool.push_back(loaded ? loaded->run : TrainOne(config, parts, *model, seed, nullptr));
  } else {
    pool = ParallelMap<RunRecord>(config.uq.pool, config.workers, [&](int j) {
      return TrainOne(config, parts, *model, DeriveSeed(seed, static_cast<uint64_t>(j)),
                      nullptr);
    });
  }
  std::vector<UqReportEntry> entries;
  for (int k : config.uq.ks) {
    UqConfig uq;
    uq.method = config.uq.method;
    uq.k = k;
    uq.level = config.uq.level;
    uq.statistic = config.uq.statistic;
    uq.num_test_inputs = config.uq.test_inputs;
    UqReportEntry e;
    e.method = uq.method;
    e.k = k;
    e.level = uq.level;
    e.statistic = uq.statistic;
    e.epsilon = std::numeric_limits<double>::quiet_NaN();
    e.widths = uq.method == UqMethod::kLastKCheckpoints
                   ? UqFromCheckpoints(pool.front(), *model, *parts.test, uq)
                   : UqFromIndependentRuns(pool, *model, *parts.test, uq,
                                           DeriveSeed(seed, 0x10000 + static_cast<uint64_t>(k)));
    std::cout << UqMethodName(uq.method) << " k=" << k
              << " averageWidth=" << FormatDouble(e.widths.average_width) << "\n";
    entries.push_back(std::move(e));
  }
  WriteUqReport(f.out + "/uq_report.json", entries);
  return kExitOk;
}

int WriteExperiment(const CommonFlags& f, const ExperimentConfig& config) {
  MakeDir(f.out);
  const ExperimentResult result = RunExperiment(config);
  WriteResultTable(f.out + "/table.csv", result.table);
  if (!result.table.series.empty()) WriteSeriesCsv(f.out + "/series.csv", result.table);
  if (!result.dpld.empty()) WriteDpldReport(f.out + "/dpld_report.csv", result.dpld);
  WriteSweepManifest(f.out, config);
  for (const ResultRow& r : result.table.rows) {
    std::cout << r.setting << " " << r.metric << " " << FormatDouble(r.mean) << " +/- "
              << FormatDouble(r.std) << " (" << r.num_seeds << " seeds)\n";
  }
  if (result.diverged > 0) {
    std::cerr << result.diverged << " seed(s) diverged; partial results written\n";
    return kExitDivergence;
  }
  return kExitOk;
}

int CmdDpldBias(const CommonFlags& f) {
  KeyValueConfig kv = LoadKv(f);
  kv.Set("task", "dpldBias");
  return WriteExperiment(f, ParseExperimentConfig(kv));
}

int CmdSweep(const CommonFlags& f) {
  return WriteExperiment(f, ParseExperimentConfig(LoadKv(f)));
}

void PrintCsv(const std::string& path) {
  std::cout << "== " << fs::path(path).filename().string() << "\n" << ReadFileText(path);
}

int CmdReport(const CommonFlags& f) {
  if (!fs::is_directory(f.out)) throw IoError("'" + f.out + "' is not a directory");
  bool any = false;
  const std::string manifest = f.out + "/manifest.json";
  if (fs::exists(manifest)) {
    any = true;
    const auto m = nlohmann::json::parse(ReadFileText(manifest), nullptr, false);
    if (m.is_discarded()) throw IoError("malformed manifest '" + manifest + "'");
    std::cout << "== manifest.json\n";
    for (const char* key : {"rho", "delta", "epsilon", "seed", "seeds", "steps", "task",
                            "timestamp"}) {
      if (m.contains(key)) std::cout << key << " = " << m[key].dump() << "\n";
    }
    if (m.contains("checkpoint_steps")) {
      std::cout << "checkpoints = " << m["checkpoint_steps"].size() << "\n";
    }
  }
  for (const char* name : {"table.csv", "dpld_report.csv"}) {
    const std::string path = f.out + "/" + name;
    if (fs::exists(path)) {
      any = true;
      PrintCsv(path);
    }
  }
  const std::string agg = f.out + "/aggregates.json";
  if (fs::exists(agg)) {
    any = true;
    const auto a = nlohmann::json::parse(ReadFileText(agg), nullptr, false);
    if (a.is_discarded()) throw IoError("malformed '" + agg + "'");
    std::cout << "== aggregates.json\n";
    for (const auto& e : a["aggregates"]) {
      std::cout << e["spec"].get<std::string>() << " resolved=" << e["resolved"].dump()
                << " accuracy=" << e["resultingAccuracy"].dump() << "\n";
    }
  }
  const std::string uq = f.out + "/uq_report.json";
  if (fs::exists(uq)) {
    any = true;
    auto u = nlohmann::json::parse(ReadFileText(uq), nullptr, false);
    if (u.is_discarded()) throw IoError("malformed '" + uq + "'");
    if (!u.is_array()) u = nlohmann::json::array({u});
    std::cout << "== uq_report.json\n";
    for (const auto& e : u) {
      std::cout << e["method"].get<std::string>() << " k=" << e["k"].dump()
                << " level=" << e["level"].dump()
                << " averageWidth=" << e["averageWidth"].dump() << "\n";
    }
  }
  if (!any) throw IoError("no dpckpt outputs in '" + f.out + "'");
  return kExitOk;
}

int Main(int argc, char** argv) {
  CLI::App app{"dpckpt: checkpoint aggregation and uncertainty for DP training"};
  app.require_subcommand(1);
  CommonFlags flags;
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const CommonFlags&);
  };
  const Sub subs[] = {
      {"train", "train and write manifest, checkpoints and metrics", CmdTrain},
      {"aggregate", "aggregate the checkpoints of a run directory (--out)", CmdAggregate},
      {"uq", "checkpoint or independent-run confidence widths", CmdUq},
      {"dpld-bias", "Langevin checkpoint-variance bias grid", CmdDpldBias},
      {"sweep", "run the config's task over seeds and write table.csv", CmdSweep},
      {"report", "summarize the outputs in --out", CmdReport},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> cmds;
  for (const Sub& s : subs) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    AddCommon(cmd, flags, true);
    cmds.emplace_back(cmd, &s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  try {
    for (const auto& [cmd, sub] : cmds) {
      if (cmd->parsed()) return sub->fn(flags);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericDivergence& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericOverflow& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

}  // namespace
}  // namespace dpckpt

int main(int argc, char** argv) { return dpckpt::Main(argc, argv); }
