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

#include "dpckpt/rng.h"

#include <cmath>
#include <numbers>

namespace dpckpt {
namespace {

constexpr uint32_t kPhiloxW32A = 0x9E3779B9;
constexpr uint32_t kPhiloxW32B = 0xBB67AE85;
constexpr uint32_t kPhiloxM4x32A = 0xD2511F53;
constexpr uint32_t kPhiloxM4x32B = 0xCD9E8D57;
constexpr int kPhiloxRounds = 10;

inline void MulHiLo(uint32_t a, uint32_t b, uint32_t& lo, uint32_t& hi) {
  const uint64_t product = static_cast<uint64_t>(a) * b;
  lo = static_cast<uint32_t>(product);
  hi = static_cast<uint32_t>(product >> 32);
}

inline PhiloxCounter Round(const PhiloxCounter& c, const PhiloxKey& k) {
  uint32_t lo0, hi0, lo1, hi1;
  MulHiLo(kPhiloxM4x32A, c[0], lo0, hi0);
  MulHiLo(kPhiloxM4x32B, c[2], lo1, hi1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline uint64_t Join(uint32_t hi, uint32_t lo) {
  return (static_cast<uint64_t>(hi) << 32) | lo;
}

}  // namespace

PhiloxCounter Philox4x32(PhiloxCounter counter, PhiloxKey key) {
  for (int r = 0; r < kPhiloxRounds; ++r) {
    if (r > 0) {
      key[0] += kPhiloxW32A;
      key[1] += kPhiloxW32B;
    }
    counter = Round(counter, key);
  }
  return counter;
}

uint64_t MixSeed(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

uint64_t DeriveSeed(uint64_t master, uint64_t index) {
  return MixSeed(MixSeed(master) ^ MixSeed(index + 0x632BE59BD9B4E019ULL));
}

double BitsToOpenUnit(uint64_t bits) {
  // 53 high bits, shifted by half an ulp so neither 0 nor 1 is produced.
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

CounterRng::CounterRng(uint64_t seed)
    : seed_(seed),
      key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)} {}

PhiloxCounter CounterRng::Block(uint64_t stream, uint64_t index) const {
  const PhiloxCounter counter{
      static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32),
      static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  return Philox4x32(counter, key_);
}

double CounterRng::Uniform(uint64_t stream, uint64_t index) const {
  const PhiloxCounter b = Block(stream, index);
  return BitsToOpenUnit(Join(b[1], b[0]));
}

double CounterRng::Gaussian(uint64_t stream, uint64_t index) const {
  const PhiloxCounter b = Block(stream, index / 2);
  const double u1 = BitsToOpenUnit(Join(b[1], b[0]));
  const double u2 = BitsToOpenUnit(Join(b[3], b[2]));
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index % 2 == 0) ? radius * std::cos(angle) : radius * std::sin(angle);
}

PhiloxEngine::PhiloxEngine(uint64_t seed, uint64_t stream)
    : rng_(seed), stream_(stream) {}

PhiloxEngine::result_type PhiloxEngine::operator()() {
  if (buffered_ == 0) {
    buffer_ = rng_.Block(stream_, index_++);
    buffered_ = 2;
  }
  --buffered_;
  return buffered_ == 1 ? Join(buffer_[1], buffer_[0])
                        : Join(buffer_[3], buffer_[2]);
}

double PhiloxEngine::NextUniform() { return BitsToOpenUnit((*this)()); }

double PhiloxEngine::NextGaussian() {
  if (has_spare_gaussian_) {
    has_spare_gaussian_ = false;
    return spare_gaussian_;
  }
  const double u1 = NextUniform();
  const double u2 = NextUniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_gaussian_ = radius * std::sin(angle);
  has_spare_gaussian_ = true;
  return radius * std::cos(angle);
}

uint64_t PhiloxEngine::NextBelow(uint64_t bound) {
  if (bound <= 1) return 0;
  const uint64_t limit = max() - max() % bound;
  uint64_t x;
  do {
    x = (*this)();
  } while (x >= limit);
  return x % bound;
}

}  // namespace dpckpt
