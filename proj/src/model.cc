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

#include "dpckpt/model.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
using MutableRowMajorMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// log(1 + exp(z)) without overflow.
double Softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LogSumExp(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

void CheckLabel(int label, int num_classes) {
  if (label < 0 || label >= num_classes) {
    throw InvalidArgument("label " + std::to_string(label) +
                          " outside [0, " + std::to_string(num_classes) + ")");
  }
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view PartitionName(Partition partition) {
  switch (partition) {
    case Partition::kUnspecified: return "unspecified";
    case Partition::kTrain: return "train";
    case Partition::kValidation: return "validation";
    case Partition::kHeldout: return "heldout";
    case Partition::kTest: return "test";
  }
  return "unknown";
}

std::string_view LossKindName(LossKind kind) {
  switch (kind) {
    case LossKind::kQuadratic: return "quadratic";
    case LossKind::kLogistic: return "logistic";
    case LossKind::kTinyMlp: return "tiny_mlp";
  }
  return "unknown";
}

Dataset::Dataset(FeatureMatrix features, std::vector<int> labels,
                 int num_classes, Partition partition)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      partition_(partition) {
  if (labels_.empty()) throw InvalidArgument("dataset must be nonempty");
  if (static_cast<Eigen::Index>(labels_.size()) != features_.rows()) {
    throw InvalidArgument("feature rows and label count differ");
  }
  if (num_classes_ < 1) throw InvalidArgument("num_classes must be positive");
  for (int y : labels_) CheckLabel(y, num_classes_);
  if (!features_.allFinite()) {
    throw InvalidArgument("dataset features must be finite");
  }
}

double Dataset::MaxFeatureNorm() const {
  return features_.rowwise().norm().maxCoeff();
}

Dataset Dataset::Subset(std::span<const int> indices) const {
  FeatureMatrix f(indices.size(), p());
  std::vector<int> y(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= n()) throw InvalidArgument("subset index out of range");
    f.row(r) = features_.row(i);
    y[r] = labels_[i];
  }
  return Dataset(std::move(f), std::move(y), num_classes_, partition_);
}

Dataset Dataset::WithPartition(Partition partition) const {
  Dataset copy = *this;
  copy.partition_ = partition;
  return copy;
}

int PredictionVector::Argmax() const {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return static_cast<int>(best);
}

ParameterVector LossModel::ExampleGradient(const ParameterVector& theta,
                                           const FeatureRow& x,
                                           int label) const {
  ParameterVector g = ParameterVector::Zero(dimension());
  AccumulateExampleGradient(theta, x, label, 1.0, g);
  return g;
}

// ---------------------------------------------------------------------------
// QuadraticLoss

QuadraticLoss::QuadraticLoss(ParameterVector center)
    : center_(std::move(center)) {
  if (center_.size() == 0) throw InvalidArgument("quadratic center is empty");
}

double QuadraticLoss::ExampleLoss(const ParameterVector& theta,
                                  const FeatureRow&, int) const {
  return 0.5 * (theta - center_).squaredNorm();
}

void QuadraticLoss::AccumulateExampleGradient(const ParameterVector& theta,
                                              const FeatureRow&, int,
                                              double scale,
                                              ParameterVector& out) const {
  out.noalias() += scale * (theta - center_);
}

Eigen::VectorXd QuadraticLoss::Logits(const ParameterVector&,
                                      const FeatureRow&) const {
  throw InvalidArgument("quadratic loss has no predictive head");
}

double QuadraticLoss::Lipschitz(const Dataset&, double radius) const {
  return radius + center_.norm();
}

// ---------------------------------------------------------------------------
// LogisticLoss

LogisticLoss::LogisticLoss(int feature_dim, int num_classes, double l2)
    : p_(feature_dim), num_classes_(num_classes), l2_(l2) {
  if (p_ < 1) throw InvalidArgument("logistic feature_dim must be positive");
  if (num_classes_ < 2) throw InvalidArgument("logistic needs >= 2 classes");
  if (!(l2_ >= 0.0)) throw InvalidArgument("l2 must be nonnegative");
}

int LogisticLoss::dimension() const {
  return binary() ? p_ : p_ * num_classes_;
}

double LogisticLoss::ExampleLoss(const ParameterVector& theta,
                                 const FeatureRow& x, int label) const {
  const double reg = 0.5 * l2_ * theta.squaredNorm();
  if (binary()) {
    const double sign = label == 1 ? 1.0 : -1.0;
    return Softplus(-sign * theta.dot(x)) + reg;
  }
  const Eigen::VectorXd z = Logits(theta, x);
  return LogSumExp(z) - z[label] + reg;
}

void LogisticLoss::AccumulateExampleGradient(const ParameterVector& theta,
                                             const FeatureRow& x, int label,
                                             double scale,
                                             ParameterVector& out) const {
  if (l2_ > 0) out.noalias() += (scale * l2_) * theta;
  if (binary()) {
    const double sign = label == 1 ? 1.0 : -1.0;
    const double w = -sign * Sigmoid(-sign * theta.dot(x));
    out.noalias() += (scale * w) * x;
    return;
  }
  const PredictionVector pred = Softmax(Logits(theta, x));
  for (int c = 0; c < num_classes_; ++c) {
    const double w = pred.probs[c] - (c == label ? 1.0 : 0.0);
    out.segment(c * p_, p_).noalias() += (scale * w) * x;
  }
}

Eigen::VectorXd LogisticLoss::Logits(const ParameterVector& theta,
                                     const FeatureRow& x) const {
  if (binary()) {
    Eigen::VectorXd z(2);
    z << 0.0, theta.dot(x);
    return z;
  }
  return RowMajorMap(theta.data(), num_classes_, p_) * x;
}

double LogisticLoss::Lipschitz(const Dataset& data, double radius) const {
  // Softmax data-term gradient is (p - e_y) x^T, and ||p - e_y|| <= sqrt(2).
  const double head = binary() ? 1.0 : std::sqrt(2.0);
  return head * data.MaxFeatureNorm() + l2_ * radius;
}

double LogisticLoss::Smoothness(const Dataset& data) const {
  const double r = data.MaxFeatureNorm();
  const double head = binary() ? 0.25 : 0.5;
  return head * r * r + l2_;
}

// ---------------------------------------------------------------------------
// TinyMlpLoss

TinyMlpLoss::TinyMlpLoss(const Options& options) : options_(options) {
  if (options_.feature_dim < 1 || options_.hidden < 1 ||
      options_.num_classes < 2) {
    throw InvalidArgument("tiny MLP widths must be positive, classes >= 2");
  }
  if (!(options_.lipschitz > 0) || !(options_.smoothness > 0)) {
    throw InvalidArgument("tiny MLP lipschitz/smoothness must be positive");
  }
  if (!(options_.l2 >= 0)) throw InvalidArgument("l2 must be nonnegative");
}

int TinyMlpLoss::dimension() const {
  const int p = options_.feature_dim, h = options_.hidden,
            c = options_.num_classes;
  return h * p + h + c * h + c;
}

Eigen::VectorXd TinyMlpLoss::Logits(const ParameterVector& theta,
                                    const FeatureRow& x) const {
  const int p = options_.feature_dim, h = options_.hidden,
            c = options_.num_classes;
  const double* base = theta.data();
  RowMajorMap w1(base, h, p);
  Eigen::Map<const Eigen::VectorXd> b1(base + h * p, h);
  RowMajorMap w2(base + h * p + h, c, h);
  Eigen::Map<const Eigen::VectorXd> b2(base + h * p + h + c * h, c);
  const Eigen::VectorXd hidden = (w1 * x + b1).array().tanh().matrix();
  return w2 * hidden + b2;
}

double TinyMlpLoss::ExampleLoss(const ParameterVector& theta,
                                const FeatureRow& x, int label) const {
  const Eigen::VectorXd z = Logits(theta, x);
  return LogSumExp(z) - z[label] + 0.5 * options_.l2 * theta.squaredNorm();
}

void TinyMlpLoss::AccumulateExampleGradient(const ParameterVector& theta,
                                            const FeatureRow& x, int label,
                                            double scale,
                                            ParameterVector& out) const {
  const int p = options_.feature_dim, h = options_.hidden,
            c = options_.num_classes;
  const double* base = theta.data();
  RowMajorMap w1(base, h, p);
  Eigen::Map<const Eigen::VectorXd> b1(base + h * p, h);
  RowMajorMap w2(base + h * p + h, c, h);
  Eigen::Map<const Eigen::VectorXd> b2(base + h * p + h + c * h, c);

  const Eigen::VectorXd hidden = (w1 * x + b1).array().tanh().matrix();
  const Eigen::VectorXd z = w2 * hidden + b2;
  Eigen::VectorXd dz = Softmax(z).probs;
  dz[label] -= 1.0;
  const Eigen::VectorXd dh = w2.transpose() * dz;
  const Eigen::VectorXd da =
      (dh.array() * (1.0 - hidden.array().square())).matrix();

  double* g = out.data();
  MutableRowMajorMap(g, h, p).noalias() += scale * da * x.transpose();
  Eigen::Map<Eigen::VectorXd>(g + h * p, h).noalias() += scale * da;
  MutableRowMajorMap(g + h * p + h, c, h).noalias() +=
      scale * dz * hidden.transpose();
  Eigen::Map<Eigen::VectorXd>(g + h * p + h + c * h, c).noalias() +=
      scale * dz;
  if (options_.l2 > 0) out.noalias() += (scale * options_.l2) * theta;
}

// ---------------------------------------------------------------------------
// Full-batch evaluation and prediction

void CheckDimensions(const LossModel& model, const ParameterVector& theta,
                     const Dataset& data) {
  if (theta.size() != model.dimension()) {
    throw InvalidArgument("theta has dimension " +
                          std::to_string(theta.size()) + ", model expects " +
                          std::to_string(model.dimension()));
  }
  if (model.feature_dim() >= 0 && data.p() != model.feature_dim()) {
    throw InvalidArgument("data has " + std::to_string(data.p()) +
                          " features, model expects " +
                          std::to_string(model.feature_dim()));
  }
  if (model.num_classes() >= 0 && data.num_classes() > model.num_classes()) {
    throw InvalidArgument("data has more classes than the model");
  }
}

double LossFull(const LossModel& model, const ParameterVector& theta,
                const Dataset& data) {
  CheckDimensions(model, theta, data);
  double total = 0.0;
  for (int i = 0; i < data.n(); ++i) {
    total += model.ExampleLoss(theta, data.x(i), data.label(i));
  }
  return total / data.n();
}

ParameterVector GradFull(const LossModel& model, const ParameterVector& theta,
                         const Dataset& data) {
  CheckDimensions(model, theta, data);
  ParameterVector g = ParameterVector::Zero(theta.size());
  const double w = 1.0 / data.n();
  for (int i = 0; i < data.n(); ++i) {
    model.AccumulateExampleGradient(theta, data.x(i), data.label(i), w, g);
  }
  return g;
}

PredictionVector Softmax(const Eigen::VectorXd& logits) {
  if (!logits.allFinite()) throw NumericOverflow("non-finite logits");
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  e /= e.sum();
  return PredictionVector{std::move(e)};
}

PredictionVector Predict(const LossModel& model, const ParameterVector& theta,
                         const FeatureRow& x) {
  if (theta.size() != model.dimension()) {
    throw InvalidArgument("theta dimension does not match model");
  }
  if (model.feature_dim() >= 0 && x.size() != model.feature_dim()) {
    throw InvalidArgument("input dimension does not match model");
  }
  return Softmax(model.Logits(theta, x));
}

double Accuracy(const LossModel& model, const ParameterVector& theta,
                const Dataset& data) {
  CheckDimensions(model, theta, data);
  int correct = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (Predict(model, theta, data.x(i)).Argmax() == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / data.n();
}

// ---------------------------------------------------------------------------
// Synthetic data, splitting, CSV

Dataset SynthClassification(int n, int p, int num_classes, double separation,
                            uint64_t seed) {
  if (n < 1 || p < 1 || num_classes < 1) {
    throw InvalidArgument("synthetic n, p, num_classes must be positive");
  }
  PhiloxEngine rng(seed, /*stream=*/0x5157);
  Eigen::MatrixXd centers(num_classes, p);
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < p; ++j) centers(c, j) = separation * rng.NextGaussian();
  }
  FeatureMatrix f(n, p);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.NextBelow(num_classes));
    for (int j = 0; j < p; ++j) f(i, j) = centers(y[i], j) + rng.NextGaussian();
  }
  return Dataset(std::move(f), std::move(y), num_classes);
}

std::vector<Dataset> SplitDataset(const Dataset& data,
                                  std::span<const int> sizes,
                                  std::span<const Partition> partitions,
                                  uint64_t seed) {
  if (sizes.size() != partitions.size()) {
    throw InvalidArgument("split sizes and partitions differ in length");
  }
  const long total = std::accumulate(sizes.begin(), sizes.end(), 0L);
  if (total > data.n()) throw InvalidArgument("split sizes exceed dataset");
  std::vector<int> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  PhiloxEngine rng(seed, /*stream=*/0x5011);
  for (int i = data.n() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.NextBelow(i + 1)]);
  }
  std::vector<Dataset> out;
  size_t offset = 0;
  for (size_t s = 0; s < sizes.size(); ++s) {
    if (sizes[s] < 1) throw InvalidArgument("split sizes must be positive");
    std::span<const int> idx(order.data() + offset, sizes[s]);
    out.push_back(data.Subset(idx).WithPartition(partitions[s]));
    offset += sizes[s];
  }
  return out;
}

Dataset LoadCsv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  int p = static_cast<int>(std::count(line.begin(), line.end(), ','));
  if (p < 1 || line.substr(line.rfind(',') + 1) != "label") {
    throw IoError(path + ": header must be f0,...,f{p-1},label");
  }
  std::vector<double> values;
  std::vector<int> labels;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    for (int j = 0; j <= p; ++j) {
      const char* stop = std::find(cur, end, ',');
      if ((j < p) == (stop == end)) {
        throw IoError(path + ": wrong field count on row " +
                      std::to_string(row));
      }
      if (j < p) {
        double v;
        auto [ptr, ec] = std::from_chars(cur, stop, v);
        if (ec != std::errc() || ptr != stop) {
          throw IoError(path + ": bad number on row " + std::to_string(row));
        }
        values.push_back(v);
      } else {
        int y;
        auto [ptr, ec] = std::from_chars(cur, stop, y);
        if (ec != std::errc() || ptr != stop) {
          throw IoError(path + ": bad label on row " + std::to_string(row));
        }
        labels.push_back(y);
      }
      cur = stop + 1;
    }
  }
  if (labels.empty()) throw IoError(path + ": no examples");
  FeatureMatrix f =
      Eigen::Map<FeatureMatrix>(values.data(), labels.size(), p);
  const int max_label = *std::max_element(labels.begin(), labels.end());
  const int classes = num_classes > 0 ? num_classes : max_label + 1;
  return Dataset(std::move(f), std::move(labels), classes);
}

void SaveCsv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (int j = 0; j < data.p(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.p(); ++j) {
      out << FormatDouble(data.features()(i, j)) << ',';
    }
    out << data.label(i) << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Diurnal sampler

DiurnalSchedule::DiurnalSchedule(int64_t period, Dataset source_a,
                                 Dataset source_b)
    : period_(period),
      source_a_(std::move(source_a)),
      source_b_(std::move(source_b)) {
  if (period_ < 2) throw InvalidArgument("diurnal period must be >= 2");
  if (source_a_.p() != source_b_.p() ||
      source_a_.num_classes() != source_b_.num_classes()) {
    throw InvalidArgument("diurnal sources must share p and num_classes");
  }
}

double DiurnalSchedule::ProbSourceA(int64_t t) const {
  if (t < 0) throw InvalidArgument("diurnal step must be nonnegative");
  const double phase = static_cast<double>(t % period_) / period_;
  return std::abs(2.0 * phase - 1.0);
}

DiurnalBatch DiurnalDraw(const DiurnalSchedule& schedule, int64_t t, int count,
                         PhiloxEngine& rng) {
  if (count < 1) throw InvalidArgument("diurnal batch count must be >= 1");
  const double prob_a = schedule.ProbSourceA(t);
  const Dataset& a = schedule.source_a();
  const Dataset& b = schedule.source_b();
  FeatureMatrix f(count, a.p());
  std::vector<int> y(count);
  std::vector<bool> from_a(count);
  for (int i = 0; i < count; ++i) {
    from_a[i] = rng.NextUniform() < prob_a;
    const Dataset& src = from_a[i] ? a : b;
    const int idx = static_cast<int>(rng.NextBelow(src.n()));
    f.row(i) = src.features().row(idx);
    y[i] = src.label(idx);
  }
  return DiurnalBatch{Dataset(std::move(f), std::move(y), a.num_classes(),
                              Partition::kTrain),
                      std::move(from_a)};
}

}  // namespace dpckpt
