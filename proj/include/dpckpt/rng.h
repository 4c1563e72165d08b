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

// Counter-based random numbers (Philox4x32-10).
//
// Every random value is a pure function of (key, counter), so noise drawn
// for training step t and coordinate j can be regenerated in any order and
// from any thread. CounterRng exposes the keyed lookup directly; PhiloxEngine
// walks a single counter stream for code that just wants "the next number".

#ifndef DPCKPT_RNG_H_
#define DPCKPT_RNG_H_

#include <array>
#include <cstdint>
#include <limits>

namespace dpckpt {

using PhiloxCounter = std::array<uint32_t, 4>;
using PhiloxKey = std::array<uint32_t, 2>;

// Ten-round Philox4x32 bijection of `counter` under `key`.
PhiloxCounter Philox4x32(PhiloxCounter counter, PhiloxKey key);

// SplitMix64 finalizer; used to derive independent child seeds.
uint64_t MixSeed(uint64_t x);

// Seed for child stream `index` of `master` (e.g. one per run or trial).
uint64_t DeriveSeed(uint64_t master, uint64_t index);

// Maps 64 random bits to a double in the open interval (0, 1).
double BitsToOpenUnit(uint64_t bits);

// Stateless keyed generator.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed);

  uint64_t seed() const { return seed_; }

  PhiloxCounter Block(uint64_t stream, uint64_t index) const;

  // Uniform in (0, 1) at (stream, index).
  double Uniform(uint64_t stream, uint64_t index) const;

  // Standard normal at (stream, index). Box-Muller over one block: indices
  // 2m and 2m+1 share a block and take its cosine and sine branch.
  double Gaussian(uint64_t stream, uint64_t index) const;

 private:
  uint64_t seed_;
  PhiloxKey key_;
};

// Sequential generator over one counter stream. Satisfies
// UniformRandomBitGenerator so it also plugs into <algorithm>.
class PhiloxEngine {
 public:
  using result_type = uint64_t;

  explicit PhiloxEngine(uint64_t seed, uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  double NextUniform();   // (0, 1)
  double NextGaussian();  // N(0, 1)

  // Uniform integer in [0, bound) without modulo bias.
  uint64_t NextBelow(uint64_t bound);

 private:
  CounterRng rng_;
  uint64_t stream_;
  uint64_t index_ = 0;
  PhiloxCounter buffer_{};
  int buffered_ = 0;
  bool has_spare_gaussian_ = false;
  double spare_gaussian_ = 0.0;
};

}  // namespace dpckpt

#endif  // DPCKPT_RNG_H_
