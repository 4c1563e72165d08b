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

#include "dpckpt/config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dpckpt/errors.h"

namespace dpckpt {
namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

double ParseDoubleValue(const std::string& key, std::string_view text) {
  text = Trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

int64_t ParseIntValue(const std::string& key, std::string_view text) {
  text = Trim(text);
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (!text.empty() && ec == std::errc() && ptr == text.data() + text.size()) {
    return v;
  }
  // Accept integral values written in floating form, e.g. 1e6.
  const double d = ParseDoubleValue(key, text);
  if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e18) {
    return static_cast<int64_t>(d);
  }
  throw ConfigError(key, "expected an integer, got '" + std::string(text) + "'");
}

std::vector<std::string> SplitList(std::string_view text, char sep) {
  std::vector<std::string> out;
  text = Trim(text);
  if (text.empty()) return out;
  size_t start = 0;
  while (true) {
    const size_t end = text.find(sep, start);
    out.emplace_back(Trim(text.substr(start, end - start)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

KeyValueConfig KeyValueConfig::Parse(std::string_view text) {
  KeyValueConfig cfg;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line),
                        "line " + std::to_string(line_no) + " has no '='");
    }
    const std::string key(Trim(line.substr(0, eq)));
    if (key.empty()) {
      throw ConfigError("", "line " + std::to_string(line_no) + " has an empty key");
    }
    if (cfg.entries_.count(key) != 0) {
      throw ConfigError(key, "duplicate key on line " + std::to_string(line_no));
    }
    cfg.entries_[key] = std::string(Trim(line.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read config file '" + path + "'");
  return Parse(ss.str());
}

void KeyValueConfig::Set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool KeyValueConfig::Has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::optional<std::string> KeyValueConfig::Find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::GetString(const std::string& key,
                                      const std::string& fallback) const {
  return Find(key).value_or(fallback);
}

double KeyValueConfig::GetDouble(const std::string& key, double fallback) const {
  const auto v = Find(key);
  return v ? ParseDoubleValue(key, *v) : fallback;
}

int64_t KeyValueConfig::GetInt(const std::string& key, int64_t fallback) const {
  const auto v = Find(key);
  return v ? ParseIntValue(key, *v) : fallback;
}

bool KeyValueConfig::GetBool(const std::string& key, bool fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + *v + "'");
}

std::vector<double> KeyValueConfig::GetDoubleList(
    const std::string& key, const std::vector<double>& fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const std::string& item : SplitList(*v)) {
    out.push_back(ParseDoubleValue(key, item));
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

std::vector<int64_t> KeyValueConfig::GetIntList(
    const std::string& key, const std::vector<int64_t>& fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  std::vector<int64_t> out;
  for (const std::string& item : SplitList(*v)) {
    out.push_back(ParseIntValue(key, item));
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

void KeyValueConfig::RejectUnused() const {
  for (const auto& [key, value] : entries_) {
    if (used_.count(key) == 0) throw ConfigError(key, "unknown key");
  }
}

std::string KeyValueConfig::ToText() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + " = " + value + "\n";
  return out;
}

}  // namespace dpckpt
