// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "sprt/common.hpp"

namespace sprt::toml {

/// Minimal TOML subset: [table] / [table.sub] headers, `key = value` with
/// strings, integers, floats, booleans and flat arrays, plus # comments.
/// Enough for run configs; no dates, no inline tables, no multiline strings.
struct Value {
  enum class Type { string, number, boolean, array };
  Type type = Type::number;
  std::string str;
  real num = 0;
  bool flag = false;
  std::vector<Value> array;
};

/// Flattened document: dotted key path -> value.
using Document = std::map<std::string, Value>;

Document parse(const std::string& text);
Document parse_file(const std::string& path);

/// Typed access with consumed-key tracking so configs can reject leftovers.
class Reader {
 public:
  explicit Reader(Document doc) : doc_(std::move(doc)) {}

  bool has(const std::string& key) const { return doc_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback);
  real get_real(const std::string& key, real fallback);
  int get_int(const std::string& key, int fallback);
  int64_t get_i64(const std::string& key, int64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_array(const std::string& key, std::vector<int> fallback);

  /// Throws config_error when any parsed key was never consumed.
  void reject_unknown() const;

 private:
  const Value* take(const std::string& key);
  Document doc_;
  std::map<std::string, bool> used_;
};

}  // namespace sprt::toml
