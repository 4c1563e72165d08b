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

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "dpckpt/errors.h"
#include "dpckpt/run_io.h"
#include "oracles.h"

namespace dpckpt {
namespace {

namespace fs = std::filesystem;

ExperimentConfig Parse(const std::string& text) {
  return ParseExperimentConfig(KeyValueConfig::Parse(text));
}

std::string ErrorKey(const std::string& text) {
  try {
    Parse(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

TEST(ConfigTest, ErrorsNameTheKey) {
  EXPECT_EQ(ErrorKey("train.stepz = 4\n"), "train.stepz");
  EXPECT_EQ(ErrorKey("data.n = abc\n"), "data.n");
  EXPECT_EQ(ErrorKey("task = nope\n"), "task");
  EXPECT_EQ(ErrorKey("data.source = parquet\n"), "data.source");
  EXPECT_EQ(ErrorKey("task = uqCompare\nuq.ks = 5, 20\nuq.pool = 10\n"), "uq.pool");
}

TEST(ConfigTest, RoundTripsThroughKeyValues) {
  const ExperimentConfig a = Parse(
      "task = pdsEval\nseeds = 4, 9\ndata.n = 300\ndata.p = 3\ndata.classes = 4\n"
      "train.steps = 40\nprivacy.rho = 0.25\n"
      "aggregate.specs = ema:beta=0.9; upa_k:k=0; opa:k=3\n");
  const KeyValueConfig kv = ExperimentConfigToKeyValues(a);
  const ExperimentConfig b = ParseExperimentConfig(KeyValueConfig::Parse(kv.ToText()));
  EXPECT_EQ(ExperimentConfigToKeyValues(b).ToText(), kv.ToText());
  EXPECT_EQ(b.seeds, (std::vector<uint64_t>{4, 9}));
  EXPECT_TRUE(b.pds.enabled);
  ASSERT_EQ(b.aggregations.size(), 3u);
  EXPECT_EQ(b.aggregations[1].k, 0);
}

TEST(ConfigTest, TaskDefaults) {
  EXPECT_EQ(Parse("task = riskCompare\n").seeds.size(), 20u);
  EXPECT_EQ(Parse("task = uqCompare\n").seeds.size(), 10u);
  EXPECT_EQ(Parse("task = aggregateEval\n").seeds.size(), 5u);
}

TEST(AggregationSpecTest, ParseFormatRoundTrip) {
  for (const char* text : {"ema:beta=0.95", "upa_k:k=10", "upa_tail:alpha=0.25", "pda:gamma=2",
                           "opa:k=5", "omv:k=0", "best_k:k=5,inner=ema,beta=0.5"}) {
    const AggregationSpec s = ParseAggregationSpec(text);
    const AggregationSpec t = ParseAggregationSpec(FormatAggregationSpec(s));
    EXPECT_EQ(t.kind, s.kind) << text;
    EXPECT_EQ(t.k, s.k) << text;
    EXPECT_EQ(t.alpha, s.alpha) << text;
    EXPECT_EQ(t.gamma, s.gamma) << text;
    EXPECT_EQ(t.beta, s.beta) << text;
  }
  EXPECT_THROW(ParseAggregationSpec("ema:beta=1.5"), InvalidArgument);
  EXPECT_THROW(ParseAggregationSpec("median:k=3"), InvalidArgument);
}

TEST(TuneTest, PicksBestWithSmallerTieBreak) {
  const std::vector<double> ks{3, 5, 10};
  EXPECT_EQ(TuneOnValidation(ks, std::vector<double>{0.7, 0.9, 0.9}), 1u);
  EXPECT_EQ(TuneOnValidation(std::vector<double>{7}, std::vector<double>{0.1}), 0u);
  EXPECT_THROW(TuneOnValidation(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
}

TEST(SummaryTest, WindowStats) {
  const std::vector<double> flat(6, 0.5);
  const WindowStats w = SummarizeSeries(flat);
  EXPECT_DOUBLE_EQ(w.mean, 0.5);
  EXPECT_EQ(w.std, 0.0);
  EXPECT_THROW(SummarizeSeries(std::vector<double>{1.0}), InvalidArgument);
  const WindowStats v = SummarizeSeries(std::vector<double>{1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(v.std, 1.0);
}

TEST(StabilityTest, RejectsTinyWindow) {
  const ExperimentConfig c = Parse(
      "data.n = 300\ndata.p = 3\ndata.classes = 3\ndata.validation = 100\n"
      "train.steps = 20\n");
  const Partitions parts = BuildPartitions(c.data);
  const auto model = BuildModel(c.model, *parts.train);
  const RunRecord run = TrainOne(c, parts, *model, 1, nullptr);
  const AggregationSpec spec = ParseAggregationSpec("upa_k:k=3");
  EXPECT_THROW(StabilityReport(run, spec, *model, *parts.validation, 1), InvalidArgument);
  EXPECT_NO_THROW(StabilityReport(run, spec, *model, *parts.validation, 2));
}

TEST(PartitionTest, SyntheticSplitsAreTaggedAndSized) {
  const ExperimentConfig c = Parse(
      "data.n = 200\ndata.p = 3\ndata.classes = 2\n"
      "data.validation = 50\ndata.heldout = 30\ndata.test = 40\n");
  const Partitions parts = BuildPartitions(c.data);
  EXPECT_EQ(parts.train->n(), 200);
  EXPECT_EQ(parts.validation->n(), 50);
  EXPECT_EQ(parts.heldout->n(), 30);
  EXPECT_EQ(parts.test->n(), 40);
  EXPECT_EQ(parts.train->partition(), Partition::kTrain);
  EXPECT_EQ(parts.test->partition(), Partition::kTest);
}

TEST(PartitionTest, MistaggedOrSharedSourcesAreRejected) {
  const ExperimentConfig c = Parse("data.n = 100\ndata.p = 3\ndata.classes = 2\ndata.test = 20\n");
  Partitions parts = BuildPartitions(c.data);
  parts.test = std::make_shared<const Dataset>(parts.test->WithPartition(Partition::kValidation));
  EXPECT_THROW(CheckDisjointPartitions(parts, c.data), ConfigError);

  const fs::path dir = fs::temp_directory_path() / "dpckpt_harness_csv";
  fs::create_directories(dir);
  SaveCsv(*BuildPartitions(c.data).train, (dir / "a.csv").string());
  const std::string csv = (dir / "a.csv").string();
  try {
    const ExperimentConfig d = Parse("data.source = csv\ndata.classes = 2\ndata.train_csv = " +
                                     csv + "\ndata.test_csv = " + (dir / "." / "a.csv").string() +
                                     "\n");
    BuildPartitions(d.data);
    ADD_FAILURE() << "shared source accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.test_csv");
  }
  fs::remove_all(dir);
}

TEST(RunIoTest, RunDirectoryRoundTrip) {
  const ExperimentConfig c = Parse(
      "data.n = 300\ndata.p = 3\ndata.classes = 3\ndata.test = 100\ntrain.steps = 25\n"
      "privacy.rho = 0.3\n");
  const Partitions parts = BuildPartitions(c.data);
  const auto model = BuildModel(c.model, *parts.train);
  const RunRecord run = TrainOne(c, parts, *model, 3, parts.test.get());
  const fs::path dir = fs::temp_directory_path() / "dpckpt_harness_run";
  fs::remove_all(dir);
  WriteRunDirectory(dir.string(), run, ExperimentConfigToKeyValues(c), "2026-01-01T00:00:00Z");
  const LoadedRun back = ReadRunDirectory(dir.string());
  EXPECT_EQ(back.timestamp, "2026-01-01T00:00:00Z");
  EXPECT_EQ(back.run.budget, run.budget);
  EXPECT_EQ(back.run.seed, 3u);
  ASSERT_EQ(back.run.checkpoints.size(), run.checkpoints.size());
  for (size_t i = 0; i < run.checkpoints.size(); ++i) {
    EXPECT_EQ(back.run.checkpoints[i].step, run.checkpoints[i].step);
    EXPECT_EQ(back.run.checkpoints[i].params, run.checkpoints[i].params);
  }
  ASSERT_EQ(back.run.metrics.size(), run.metrics.size());
  EXPECT_EQ(back.run.metrics.back().train_loss, run.metrics.back().train_loss);
  EXPECT_THROW(ReadRunDirectory((dir / "missing").string()), IoError);
  fs::remove_all(dir);
}

TEST(RunIoTest, CheckpointsAreLittleEndianRowMajor) {
  const fs::path path = fs::temp_directory_path() / "dpckpt_harness_ck.bin";
  std::vector<Checkpoint> ck(2);
  ck[0].params = ParameterVector::Constant(2, 1.0);
  ck[1].params = ParameterVector::Constant(2, -2.5);
  WriteCheckpointsBin(path.string(), ck);
  const std::string bytes = ReadFileText(path.string());
  ASSERT_EQ(bytes.size(), 32u);
  // 1.0 = 0x3FF0000000000000, low byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x00);
  const auto back = ReadCheckpointsBin(path.string(), 2, 2);
  EXPECT_EQ(back[1], ck[1].params);
  fs::remove(path);
}

TEST(ParallelTest, ResultsInIndexOrder) {
  std::atomic<int> calls{0};
  const auto out = ParallelMap<int>(50, 4, [&](int i) {
    ++calls;
    return i * i;
  });
  ASSERT_EQ(out.size(), 50u);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(out[i], i * i);
  EXPECT_EQ(calls.load(), 50);
}

TEST(ParallelTest, DivergenceLeavesEmptySlot) {
  const auto out = ParallelMapTolerant<int>(6, 2, [](int i) {
    if (i == 3) throw NumericDivergence("boom", 3);
    return i;
  });
  EXPECT_FALSE(out[3].has_value());
  EXPECT_EQ(out[5].value(), 5);
  EXPECT_THROW(ParallelMap<int>(3, 2, [](int i) -> int {
                 if (i == 1) throw std::runtime_error("x");
                 return i;
               }),
               std::runtime_error);
}

TEST(ResultTableTest, SingleSeedStdIsNaN) {
  ResultTable t;
  t.Add("a", "m", {0.5});
  EXPECT_EQ(t.Find("a", "m").mean, 0.5);
  EXPECT_TRUE(std::isnan(t.Find("a", "m").std));
}

// Averages of checkpoints inside the ball stay inside it.
TEST(BallInvariantTest, AggregatesRespectRadius) {
  const double radius = 1.5;
  auto ck = oracle::RandomStream(80, 6, 91);
  for (Checkpoint& c : ck) c.params = ProjectL2(c.params * 3.0, radius);
  for (const Checkpoint& c : ck) ASSERT_LE(c.params.norm(), radius * (1 + 1e-12));
  const double slack = radius * (1 + 1e-12);
  for (double beta : {0.1, 0.9, 0.999}) EXPECT_LE(EmaOverSequence(ck, beta).norm(), slack);
  for (double gamma : {0.0, 1.0, 5.0}) EXPECT_LE(PdaOverSequence(ck, gamma).norm(), slack);
  for (int k : {1, 7, 80}) EXPECT_LE(UpaPastK(ck, k).norm(), slack);
  for (double alpha : {0.1, 0.5, 1.0}) EXPECT_LE(UpaTail(ck, alpha, 80).norm(), slack);
}

}  // namespace
}  // namespace dpckpt
