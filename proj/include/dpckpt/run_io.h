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

// On-disk run artifacts.
//
//   manifest.json     budget, config echo, seed, checkpoint steps, timestamp
//   checkpoints.bin   little-endian float64, one row per checkpoint
//   metrics.csv       step,train_loss,eval_acc
//
// Only the manifest carries a timestamp; every other file is a pure function
// of the config and seed.

#ifndef DPCKPT_RUN_IO_H_
#define DPCKPT_RUN_IO_H_

#include <string>
#include <vector>

#include "dpckpt/config.h"
#include "dpckpt/harness.h"
#include "dpckpt/trainer.h"
#include "dpckpt/uncertainty.h"

namespace dpckpt {

// UTC, ISO 8601 with seconds.
std::string CurrentTimestamp();

void WriteRunDirectory(const std::string& dir, const RunRecord& run,
                       const KeyValueConfig& config_echo,
                       const std::string& timestamp);

struct LoadedRun {
  RunRecord run;
  KeyValueConfig config;
  std::string timestamp;
};

// Inverse of WriteRunDirectory. Throws IoError on missing or malformed files.
LoadedRun ReadRunDirectory(const std::string& dir);

// Checkpoint matrix only.
void WriteCheckpointsBin(const std::string& path,
                         const std::vector<Checkpoint>& checkpoints);
std::vector<ParameterVector> ReadCheckpointsBin(const std::string& path,
                                                int dimension, size_t count);

void WriteMetricsCsv(const std::string& path,
                     const std::vector<StepMetrics>& metrics);

void WriteAggregatesJson(const std::string& path,
                         const std::vector<AggregateResult>& results);

struct UqReportEntry {
  UqMethod method = UqMethod::kLastKCheckpoints;
  int k = 0;
  double level = 0.95;
  StatisticMode statistic = StatisticMode::kModalClassProbability;
  double epsilon = 0.0;  // NaN when not budget-driven
  UqWidths widths;
};

// A single entry is written as a bare object, several as an array.
void WriteUqReport(const std::string& path,
                   const std::vector<UqReportEntry>& entries);

void WriteDpldReport(const std::string& path,
                     const std::vector<VarianceBiasReport>& reports);

void WriteResultTable(const std::string& path, const ResultTable& table);
void WriteSeriesCsv(const std::string& path, const ResultTable& table);

// Reads a whole file; IoError on failure.
std::string ReadFileText(const std::string& path);

}  // namespace dpckpt

#endif  // DPCKPT_RUN_IO_H_
