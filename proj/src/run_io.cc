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

#include "dpckpt/run_io.h"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Writes through a temporary file so readers never see a partial artifact.
void WriteFileAtomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

void EnsureDirectory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

json Number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double NumberOr(const json& j, const char* key, double fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_number()) throw IoError(std::string("manifest field '") + key + "' is not a number");
  return it->get<double>();
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

uint64_t ToLittle(uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xff) << (8 * (7 - i));
    return r;
  }
  return v;
}

json SpecParams(const AggregationSpec& s) {
  json p = json::object();
  switch (s.kind) {
    case AggregationKind::kEma: p["beta"] = s.beta; break;
    case AggregationKind::kUpaTail: p["alpha"] = s.alpha; break;
    case AggregationKind::kPda: p["gamma"] = s.gamma; break;
    case AggregationKind::kUpaK:
    case AggregationKind::kOpa:
    case AggregationKind::kOmv: p["k"] = s.k; break;
    case AggregationKind::kBestK:
      p["k"] = s.k;
      p["inner"] = std::string(AggregationKindName(s.inner));
      if (s.inner == AggregationKind::kEma) p["beta"] = s.beta;
      break;
  }
  return p;
}

std::vector<StepMetrics> ReadMetricsCsv(const std::string& path) {
  std::istringstream in(ReadFileText(path));
  std::string line;
  if (!std::getline(in, line) || line != "step,train_loss,eval_acc") {
    throw IoError("'" + path + "' lacks the metrics header");
  }
  std::vector<StepMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = SplitList(line, ',');
    if (f.size() != 3) throw IoError("malformed metrics row '" + line + "'");
    try {
      StepMetrics m;
      m.step = ParseIntValue("step", f[0]);
      m.train_loss = ParseDoubleValue("train_loss", f[1]);
      m.eval_accuracy = ParseDoubleValue("eval_acc", f[2]);
      out.push_back(m);
    } catch (const ConfigError& e) {
      throw IoError("malformed metrics row '" + line + "': " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string ReadFileText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read '" + path + "'");
  return ss.str();
}

std::string CurrentTimestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

void WriteCheckpointsBin(const std::string& path,
                         const std::vector<Checkpoint>& checkpoints) {
  std::string bytes;
  for (const Checkpoint& c : checkpoints) {
    for (Eigen::Index j = 0; j < c.params.size(); ++j) {
      const uint64_t bits = ToLittle(std::bit_cast<uint64_t>(c.params[j]));
      char raw[8];
      std::memcpy(raw, &bits, 8);
      bytes.append(raw, 8);
    }
  }
  WriteFileAtomic(path, bytes);
}

std::vector<ParameterVector> ReadCheckpointsBin(const std::string& path,
                                                int dimension, size_t count) {
  const std::string bytes = ReadFileText(path);
  if (bytes.size() != count * static_cast<size_t>(dimension) * 8) {
    throw IoError("'" + path + "' holds " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(count) + " rows of " +
                  std::to_string(dimension) + " doubles");
  }
  std::vector<ParameterVector> out(count, ParameterVector(dimension));
  size_t off = 0;
  for (size_t i = 0; i < count; ++i) {
    for (int j = 0; j < dimension; ++j, off += 8) {
      uint64_t bits = 0;
      std::memcpy(&bits, bytes.data() + off, 8);
      out[i][j] = std::bit_cast<double>(ToLittle(bits));
    }
  }
  return out;
}

void WriteMetricsCsv(const std::string& path, const std::vector<StepMetrics>& metrics) {
  std::string out = "step,train_loss,eval_acc\n";
  for (const StepMetrics& m : metrics) {
    out += std::to_string(m.step) + "," + FormatDouble(m.train_loss) + "," +
           FormatDouble(m.eval_accuracy) + "\n";
  }
  WriteFileAtomic(path, out);
}

void WriteRunDirectory(const std::string& dir, const RunRecord& run,
                       const KeyValueConfig& config_echo,
                       const std::string& timestamp) {
  EnsureDirectory(dir);
  json m;
  const bool noiseless = std::isinf(run.budget.rho);
  m["rho"] = Number(run.budget.rho);
  m["delta"] = run.budget.delta;
  m["epsilon"] = Number(run.budget.epsilon);
  m["noiseless"] = noiseless;
  m["rho_per_step"] = Number(run.rho_per_step);
  m["noise_variance"] = run.noise_variance;
  m["lipschitz"] = run.lipschitz;
  m["eta_scale"] = run.eta_scale;
  m["mode"] = std::string(TrainerModeName(run.config.mode));
  m["seed"] = run.seed;
  m["dimension"] = run.dimension;
  m["steps"] = run.config.steps;
  std::vector<int64_t> steps;
  for (const Checkpoint& c : run.checkpoints) steps.push_back(c.step);
  m["checkpoint_steps"] = steps;
  m["config"] = config_echo.entries();
  m["timestamp"] = timestamp;
  WriteCheckpointsBin(dir + "/checkpoints.bin", run.checkpoints);
  WriteMetricsCsv(dir + "/metrics.csv", run.metrics);
  WriteFileAtomic(dir + "/manifest.json", m.dump(2) + "\n");
}

LoadedRun ReadRunDirectory(const std::string& dir) {
  json m;
  try {
    m = json::parse(ReadFileText(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in '" + dir + "': " + e.what());
  }
  LoadedRun out;
  try {
    for (const auto& [key, value] : m.at("config").items()) {
      out.config.Set(key, value.get<std::string>());
    }
    out.timestamp = m.at("timestamp").get<std::string>();
    RunRecord& run = out.run;
    const double inf = std::numeric_limits<double>::infinity();
    const bool noiseless = m.value("noiseless", false);
    run.budget.delta = m.at("delta").get<double>();
    run.budget.rho = noiseless ? inf : NumberOr(m, "rho", inf);
    run.budget.epsilon = noiseless ? inf : NumberOr(m, "epsilon", inf);
    run.rho_per_step = NumberOr(m, "rho_per_step", inf);
    run.noise_variance = m.at("noise_variance").get<double>();
    run.lipschitz = m.at("lipschitz").get<double>();
    run.eta_scale = m.at("eta_scale").get<double>();
    run.seed = m.at("seed").get<uint64_t>();
    run.dimension = m.at("dimension").get<int>();
    const std::vector<int64_t> steps = m.at("checkpoint_steps").get<std::vector<int64_t>>();
    const ExperimentConfig cfg = ParseExperimentConfig(out.config);
    run.config = cfg.trainer;
    run.config.seed = run.seed;
    run.config.steps = m.at("steps").get<int64_t>();
    const std::vector<ParameterVector> params =
        ReadCheckpointsBin(dir + "/checkpoints.bin", run.dimension, steps.size());
    for (size_t i = 0; i < steps.size(); ++i) {
      run.checkpoints.push_back(Checkpoint{steps[i], params[i]});
    }
    run.metrics = ReadMetricsCsv(dir + "/metrics.csv");
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in '" + dir + "': " + e.what());
  }
  return out;
}

void WriteAggregatesJson(const std::string& path,
                         const std::vector<AggregateResult>& results) {
  json arr = json::array();
  for (const AggregateResult& r : results) {
    json e;
    e["kind"] = std::string(AggregationKindName(r.requested.kind));
    e["spec"] = FormatAggregationSpec(r.requested);
    e["params"] = SpecParams(r.requested);
    e["resolved"] = {{"k", r.resolved.k},
                     {"alpha", r.resolved.alpha},
                     {"gamma", r.resolved.gamma},
                     {"beta", r.resolved.beta}};
    e["resultingAccuracy"] = Number(r.test_accuracy);
    e["validationAccuracy"] = Number(r.validation_accuracy);
    arr.push_back(e);
  }
  json doc;
  doc["aggregates"] = arr;
  WriteFileAtomic(path, doc.dump(2) + "\n");
}

void WriteUqReport(const std::string& path, const std::vector<UqReportEntry>& entries) {
  auto one = [](const UqReportEntry& u) {
    json e;
    e["method"] = std::string(UqMethodName(u.method));
    e["k"] = u.k;
    e["level"] = u.level;
    e["statisticMode"] = std::string(StatisticModeName(u.statistic));
    if (std::isfinite(u.epsilon)) e["epsilon"] = u.epsilon;
    e["averageWidth"] = u.widths.average_width;
    e["perInputWidths"] = u.widths.per_input;
    return e;
  };
  json doc;
  if (entries.size() == 1) {
    doc = one(entries.front());
  } else {
    doc = json::array();
    for (const UqReportEntry& u : entries) doc.push_back(one(u));
  }
  WriteFileAtomic(path, doc.dump(2) + "\n");
}

void WriteDpldReport(const std::string& path,
                     const std::vector<VarianceBiasReport>& reports) {
  std::string out = "t1,gap,k,trials,mean_S,oracle_V,abs_bias,oracle_SE,burn_in_bound\n";
  for (const VarianceBiasReport& r : reports) {
    out += FormatDouble(r.times.t1) + "," + FormatDouble(r.times.gap) + "," +
           std::to_string(r.times.k) + "," + std::to_string(r.trials) + "," +
           FormatDouble(r.mean_s) + "," + FormatDouble(r.oracle_v) + "," +
           FormatDouble(r.abs_bias) + "," + FormatDouble(r.oracle_se) + "," +
           FormatDouble(r.burn_in_bound) + "\n";
  }
  WriteFileAtomic(path, out);
}

void WriteResultTable(const std::string& path, const ResultTable& table) {
  std::string out = "setting,metric,mean,std,num_seeds,num_diverged\n";
  for (const ResultRow& r : table.rows) {
    out += CsvField(r.setting) + "," + CsvField(r.metric) + "," + FormatDouble(r.mean) +
           "," + FormatDouble(r.std) + "," + std::to_string(r.num_seeds) + "," +
           std::to_string(r.num_diverged) + "\n";
  }
  WriteFileAtomic(path, out);
}

void WriteSeriesCsv(const std::string& path, const ResultTable& table) {
  std::string out = "seed,step,method,value\n";
  for (const SeriesPoint& p : table.series) {
    out += std::to_string(p.seed) + "," + std::to_string(p.step) + "," +
           CsvField(p.method) + "," + FormatDouble(p.value) + "\n";
  }
  WriteFileAtomic(path, out);
}

}  // namespace dpckpt
