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

// Loss models, prediction heads, datasets and the periodic-shift sampler.

#ifndef DPCKPT_MODEL_H_
#define DPCKPT_MODEL_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dpckpt/rng.h"

namespace dpckpt {

using ParameterVector = Eigen::VectorXd;
using FeatureRow = Eigen::Ref<const Eigen::VectorXd>;
using FeatureMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Which split a dataset belongs to. Aggregation tuning and data-dependent
// checkpoint selection refuse to run on the wrong partition.
enum class Partition { kUnspecified, kTrain, kValidation, kHeldout, kTest };

std::string_view PartitionName(Partition partition);

// Immutable labelled examples. Rows of `features` are examples.
class Dataset {
 public:
  Dataset(FeatureMatrix features, std::vector<int> labels, int num_classes,
          Partition partition = Partition::kUnspecified);

  int n() const { return static_cast<int>(labels_.size()); }
  int p() const { return static_cast<int>(features_.cols()); }
  int num_classes() const { return num_classes_; }
  Partition partition() const { return partition_; }

  const FeatureMatrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  Eigen::Map<const Eigen::VectorXd> x(int i) const {
    return Eigen::Map<const Eigen::VectorXd>(features_.row(i).data(), p());
  }
  int label(int i) const { return labels_[i]; }

  double MaxFeatureNorm() const;

  Dataset Subset(std::span<const int> indices) const;
  Dataset WithPartition(Partition partition) const;

 private:
  FeatureMatrix features_;
  std::vector<int> labels_;
  int num_classes_;
  Partition partition_;
};

// Prediction on the probability simplex.
struct PredictionVector {
  Eigen::VectorXd probs;

  // Most probable class; ties go to the lowest index.
  int Argmax() const;
};

enum class LossKind { kQuadratic, kLogistic, kTinyMlp };

std::string_view LossKindName(LossKind kind);

// A per-example loss l(theta; d) with the constants the privacy and
// convergence analyses need. Implementations are immutable.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual LossKind kind() const = 0;
  virtual int dimension() const = 0;

  // Feature dimension and class count this model expects; -1 if the model
  // ignores the data (quadratic).
  virtual int feature_dim() const = 0;
  virtual int num_classes() const = 0;

  virtual double ExampleLoss(const ParameterVector& theta, const FeatureRow& x,
                             int label) const = 0;
  // out += scale * grad_theta l(theta; (x, label)).
  virtual void AccumulateExampleGradient(const ParameterVector& theta,
                                         const FeatureRow& x, int label,
                                         double scale,
                                         ParameterVector& out) const = 0;
  // Unnormalized class scores; throws InvalidArgument for models without a
  // predictive head.
  virtual Eigen::VectorXd Logits(const ParameterVector& theta,
                                 const FeatureRow& x) const = 0;

  // Bound on ||grad l|| over the l2 ball of the given radius.
  virtual double Lipschitz(const Dataset& data, double radius) const = 0;
  virtual double Smoothness(const Dataset& data) const = 0;
  virtual double StrongConvexity() const = 0;

  ParameterVector ExampleGradient(const ParameterVector& theta,
                                  const FeatureRow& x, int label) const;
};

// 0.5 * ||theta - center||^2 for every example: 1-smooth, 1-strongly convex.
class QuadraticLoss final : public LossModel {
 public:
  explicit QuadraticLoss(ParameterVector center);

  const ParameterVector& center() const { return center_; }

  LossKind kind() const override { return LossKind::kQuadratic; }
  int dimension() const override { return static_cast<int>(center_.size()); }
  int feature_dim() const override { return -1; }
  int num_classes() const override { return -1; }
  double ExampleLoss(const ParameterVector& theta, const FeatureRow& x,
                     int label) const override;
  void AccumulateExampleGradient(const ParameterVector& theta,
                                 const FeatureRow& x, int label, double scale,
                                 ParameterVector& out) const override;
  Eigen::VectorXd Logits(const ParameterVector& theta,
                         const FeatureRow& x) const override;
  double Lipschitz(const Dataset& data, double radius) const override;
  double Smoothness(const Dataset&) const override { return 1.0; }
  double StrongConvexity() const override { return 1.0; }

 private:
  ParameterVector center_;
};

// l2-regularized logistic regression. Two classes use a single weight vector
// with a sigmoid head; more classes use softmax regression with one weight
// block of size p per class (class c occupies [c*p, (c+1)*p)).
class LogisticLoss final : public LossModel {
 public:
  LogisticLoss(int feature_dim, int num_classes, double l2);

  double l2() const { return l2_; }
  bool binary() const { return num_classes_ == 2; }

  LossKind kind() const override { return LossKind::kLogistic; }
  int dimension() const override;
  int feature_dim() const override { return p_; }
  int num_classes() const override { return num_classes_; }
  double ExampleLoss(const ParameterVector& theta, const FeatureRow& x,
                     int label) const override;
  void AccumulateExampleGradient(const ParameterVector& theta,
                                 const FeatureRow& x, int label, double scale,
                                 ParameterVector& out) const override;
  Eigen::VectorXd Logits(const ParameterVector& theta,
                         const FeatureRow& x) const override;
  double Lipschitz(const Dataset& data, double radius) const override;
  double Smoothness(const Dataset& data) const override;
  double StrongConvexity() const override { return l2_; }

 private:
  int p_;
  int num_classes_;
  double l2_;
};

// One tanh hidden layer with softmax output. Parameters are laid out as
// W1 (hidden x p, row-major), b1, W2 (classes x hidden, row-major), b2.
// There is no closed-form Lipschitz/smoothness bound, so both are supplied.
class TinyMlpLoss final : public LossModel {
 public:
  struct Options {
    int feature_dim = 0;
    int hidden = 16;
    int num_classes = 2;
    double l2 = 0.0;
    double lipschitz = 1.0;
    double smoothness = 1.0;
  };

  explicit TinyMlpLoss(const Options& options);

  int hidden() const { return options_.hidden; }

  LossKind kind() const override { return LossKind::kTinyMlp; }
  int dimension() const override;
  int feature_dim() const override { return options_.feature_dim; }
  int num_classes() const override { return options_.num_classes; }
  double ExampleLoss(const ParameterVector& theta, const FeatureRow& x,
                     int label) const override;
  void AccumulateExampleGradient(const ParameterVector& theta,
                                 const FeatureRow& x, int label, double scale,
                                 ParameterVector& out) const override;
  Eigen::VectorXd Logits(const ParameterVector& theta,
                         const FeatureRow& x) const override;
  double Lipschitz(const Dataset&, double) const override {
    return options_.lipschitz;
  }
  double Smoothness(const Dataset&) const override {
    return options_.smoothness;
  }
  double StrongConvexity() const override { return options_.l2; }

 private:
  Options options_;
};

// (1/n) * sum_i l(theta; d_i).
double LossFull(const LossModel& model, const ParameterVector& theta,
                const Dataset& data);

// Average per-example gradient.
ParameterVector GradFull(const LossModel& model, const ParameterVector& theta,
                         const Dataset& data);

// Softmax of the model's logits (sigmoid pair for binary logistic).
PredictionVector Predict(const LossModel& model, const ParameterVector& theta,
                         const FeatureRow& x);

// Numerically stable softmax; throws NumericOverflow on non-finite input.
PredictionVector Softmax(const Eigen::VectorXd& logits);

double Accuracy(const LossModel& model, const ParameterVector& theta,
                const Dataset& data);

// Throws InvalidArgument unless theta and data fit the model.
void CheckDimensions(const LossModel& model, const ParameterVector& theta,
                     const Dataset& data);

// Gaussian class clusters: centers ~ N(0, separation^2 I),
// features = center[label] + N(0, I), labels uniform.
Dataset SynthClassification(int n, int p, int num_classes, double separation,
                            uint64_t seed);

// Shuffles `data` and cuts it into consecutive pieces of the given sizes,
// tagging each with the matching partition.
std::vector<Dataset> SplitDataset(const Dataset& data,
                                  std::span<const int> sizes,
                                  std::span<const Partition> partitions,
                                  uint64_t seed);

// Examples whose label satisfies `keep(label)`; class count is unchanged.
template <typename Pred>
Dataset FilterByLabel(const Dataset& data, Pred keep) {
  std::vector<int> idx;
  for (int i = 0; i < data.n(); ++i) {
    if (keep(data.label(i))) idx.push_back(i);
  }
  return data.Subset(idx);
}

// Reads `f0,...,f{p-1},label` CSV. The class count is max(label) + 1 unless
// `num_classes` is positive.
Dataset LoadCsv(const std::string& path, int num_classes = 0);
void SaveCsv(const Dataset& data, const std::string& path);

// Training distribution oscillating between two sources with period T.
class DiurnalSchedule {
 public:
  DiurnalSchedule(int64_t period, Dataset source_a, Dataset source_b);

  int64_t period() const { return period_; }
  const Dataset& source_a() const { return source_a_; }
  const Dataset& source_b() const { return source_b_; }

  // Probability of drawing from source A at step t: |2 (t mod T)/T - 1|.
  double ProbSourceA(int64_t t) const;

 private:
  int64_t period_;
  Dataset source_a_;
  Dataset source_b_;
};

struct DiurnalBatch {
  Dataset batch;
  std::vector<bool> from_source_a;
};

// Draws `count` examples, each from source A with probability
// ProbSourceA(t) and uniformly within the chosen source.
DiurnalBatch DiurnalDraw(const DiurnalSchedule& schedule, int64_t t, int count,
                         PhiloxEngine& rng);

}  // namespace dpckpt

#endif  // DPCKPT_MODEL_H_
