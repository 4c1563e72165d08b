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

#ifndef DPCKPT_ERRORS_H_
#define DPCKPT_ERRORS_H_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dpckpt {

// Bad argument values, dimension mismatches, out-of-range parameters.
using InvalidArgument = std::invalid_argument;

// An operation was called before its required setup step.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values produced while evaluating a model (e.g. logits).
class NumericOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A training or simulation trajectory left the finite reals.
class NumericDivergence : public std::runtime_error {
 public:
  NumericDivergence(const std::string& what, int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

// Malformed experiment configuration; carries the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dpckpt

#endif  // DPCKPT_ERRORS_H_
