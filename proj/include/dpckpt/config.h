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

// `key = value` configuration files.
//
//   # comment
//   train.steps = 500      # trailing comments are allowed
//   seeds = 1, 2, 3
//
// Keys are unique. Every getter records the key as consumed so that
// RejectUnused() can flag typos.

#ifndef DPCKPT_CONFIG_H_
#define DPCKPT_CONFIG_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dpckpt {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  // Throws ConfigError on malformed lines or duplicate keys.
  static KeyValueConfig Parse(std::string_view text);
  // Throws IoError if the file cannot be read.
  static KeyValueConfig Load(const std::string& path);

  void Set(const std::string& key, const std::string& value);
  bool Has(const std::string& key) const;

  std::optional<std::string> Find(const std::string& key) const;
  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  int64_t GetInt(const std::string& key, int64_t fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  std::vector<double> GetDoubleList(const std::string& key,
                                    const std::vector<double>& fallback) const;
  std::vector<int64_t> GetIntList(const std::string& key,
                                  const std::vector<int64_t>& fallback) const;

  // ConfigError naming the first key no getter asked for.
  void RejectUnused() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Canonical text form, keys sorted.
  std::string ToText() const;

 private:
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

// Free-standing value parsers; throw ConfigError tagged with `key`.
double ParseDoubleValue(const std::string& key, std::string_view text);
int64_t ParseIntValue(const std::string& key, std::string_view text);
std::vector<std::string> SplitList(std::string_view text, char sep = ',');

// Shortest round-trip decimal form of a double ("inf", "-inf", "nan" for the
// special values).
std::string FormatDouble(double v);

}  // namespace dpckpt

#endif  // DPCKPT_CONFIG_H_
