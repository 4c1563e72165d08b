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

#ifndef DPCKPT_HARNESS_INL_H_
#define DPCKPT_HARNESS_INL_H_

#include <algorithm>
#include <atomic>
#include <thread>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace internal {

// Work-stealing over an atomic index; each slot is written by exactly one
// thread, so the output order never depends on scheduling.
template <typename R>
void RunSlots(int count, int workers, const std::function<R(int)>& fn,
              std::vector<std::optional<R>>& out,
              std::vector<std::exception_ptr>& errors) {
  out.assign(count, std::nullopt);
  errors.assign(count, nullptr);
  std::atomic<int> next{0};
  auto body = [&] {
    for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        out[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(workers, 1, std::max(1, count));
  if (threads == 1) {
    body();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
}

}  // namespace internal

template <typename R>
std::vector<R> ParallelMap(int count, int workers,
                           const std::function<R(int)>& fn) {
  std::vector<std::optional<R>> slots;
  std::vector<std::exception_ptr> errors;
  internal::RunSlots(count, workers, fn, slots, errors);
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(count);
  for (std::optional<R>& s : slots) out.push_back(std::move(*s));
  return out;
}

template <typename R>
std::vector<std::optional<R>> ParallelMapTolerant(
    int count, int workers, const std::function<R(int)>& fn) {
  std::vector<std::optional<R>> slots;
  std::vector<std::exception_ptr> errors;
  internal::RunSlots(count, workers, fn, slots, errors);
  for (const std::exception_ptr& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const NumericDivergence&) {
      // Flagged by the empty slot.
    }
  }
  return slots;
}

}  // namespace dpckpt

#endif  // DPCKPT_HARNESS_INL_H_
