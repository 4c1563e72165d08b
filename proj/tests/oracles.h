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

// Brute-force reference implementations used by the unit and acceptance
// tests. These use plain std::vector loops on purpose and share no code
// with the library beyond the model's Predict.

#ifndef DPCKPT_TESTS_ORACLES_H_
#define DPCKPT_TESTS_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dpckpt/model.h"
#include "dpckpt/rng.h"
#include "dpckpt/trainer.h"

namespace dpckpt::oracle {

using Vec = std::vector<double>;

inline Vec ToVec(const ParameterVector& v) { return Vec(v.data(), v.data() + v.size()); }

inline std::vector<Checkpoint> RandomStream(int count, int dim, uint64_t seed) {
  PhiloxEngine rng(seed);
  std::vector<Checkpoint> out;
  for (int i = 0; i < count; ++i) {
    ParameterVector p(dim);
    for (int j = 0; j < dim; ++j) p[j] = rng.NextGaussian();
    out.push_back({i + 1, p});
  }
  return out;
}

// Weighted sum of checkpoint parameters.
inline Vec Combine(const std::vector<Checkpoint>& ck, const Vec& w) {
  Vec out(ck.front().params.size(), 0.0);
  for (size_t i = 0; i < ck.size(); ++i) {
    for (size_t j = 0; j < out.size(); ++j) out[j] += w[i] * ck[i].params[j];
  }
  return out;
}

// Unrolled weights of a recursion a_i: w_i = a_i prod_{l > i} (1 - a_l),
// with a_0 = 1 for the seed element.
inline Vec UnrolledWeights(const Vec& a) {
  Vec w(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    double prod = a[i];
    for (size_t l = i + 1; l < a.size(); ++l) prod *= 1.0 - a[l];
    w[i] = prod;
  }
  return w;
}

inline Vec EmaWeights(size_t count, double beta) {
  Vec a(count);
  a[0] = 1.0;
  for (size_t t = 1; t < count; ++t) {
    a[t] = std::min(beta, (1.0 + t) / (10.0 + t));
  }
  return UnrolledWeights(a);
}

inline Vec PdaWeights(size_t count, double gamma) {
  Vec a(count);
  a[0] = 1.0;
  for (size_t i = 1; i < count; ++i) {
    const double t = static_cast<double>(i + 1);
    a[i] = (gamma + 1.0) / (t + gamma);
  }
  return UnrolledWeights(a);
}

inline Vec UpaWeights(size_t count, size_t k) {
  Vec w(count, 0.0);
  for (size_t i = count - k; i < count; ++i) w[i] = 1.0 / static_cast<double>(k);
  return w;
}

inline Vec TailWeights(const std::vector<Checkpoint>& ck, double alpha,
                       int64_t total) {
  const double cutoff = std::floor((1.0 - alpha) * static_cast<double>(total));
  size_t count = 0;
  for (const Checkpoint& c : ck) count += c.step > cutoff;
  Vec w(ck.size(), 0.0);
  for (size_t i = 0; i < ck.size(); ++i) {
    if (ck[i].step > cutoff) w[i] = 1.0 / static_cast<double>(count);
  }
  return w;
}

inline int ArgmaxLowest(const Vec& v) {
  int best = 0;
  for (size_t c = 1; c < v.size(); ++c) {
    if (v[c] > v[best]) best = static_cast<int>(c);
  }
  return best;
}

inline int OpaLabel(const std::vector<ParameterVector>& models,
                    const LossModel& model, const FeatureRow& x) {
  Vec mean;
  for (const ParameterVector& m : models) {
    const PredictionVector p = Predict(model, m, x);
    if (mean.empty()) mean.assign(p.probs.size(), 0.0);
    for (Eigen::Index c = 0; c < p.probs.size(); ++c) mean[c] += p.probs[c];
  }
  for (double& v : mean) v /= static_cast<double>(models.size());
  return ArgmaxLowest(mean);
}

inline int OmvLabel(const std::vector<ParameterVector>& models,
                    const LossModel& model, const FeatureRow& x,
                    int num_classes) {
  Vec votes(num_classes, 0.0);
  for (const ParameterVector& m : models) {
    votes[ArgmaxLowest(ToVec(Predict(model, m, x).probs))] += 1.0;
  }
  return ArgmaxLowest(votes);
}

// Student-t CDF by composite Simpson on [0, x] with step about h; the
// density normalizer comes from lgamma.
inline double TCdfSimpson(double x, double nu, double h = 1e-3) {
  const double logc = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) -
                      0.5 * std::log(nu * std::numbers::pi);
  auto density = [&](double t) {
    return std::exp(logc - (nu + 1) / 2 * std::log1p(t * t / nu));
  };
  const int intervals = 2 * std::max(1, static_cast<int>(std::ceil(x / (2 * h))));
  const double step = x / intervals;
  double s = density(0) + density(x);
  for (int i = 1; i < intervals; ++i) {
    s += (i % 2 ? 4.0 : 2.0) * density(i * step);
  }
  return 0.5 + s * step / 3.0;
}

// Quantile for p > 1/2 by bracket doubling and bisection on the Simpson CDF.
inline double TQuantileSimpson(double nu, double p) {
  double lo = 0.0, hi = 1.0;
  while (TCdfSimpson(hi, nu) < p) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    (TCdfSimpson(mid, nu) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Normal quantile by bisection on erfc.
inline double NormalQuantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace dpckpt::oracle

#endif  // DPCKPT_TESTS_ORACLES_H_
