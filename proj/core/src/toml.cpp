// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/toml.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sprt::toml {

namespace {

std::string strip(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Removes a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

Value parse_scalar(const std::string& raw, int line_no) {
  Value v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.type = Value::Type::string;
    v.str = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.type = Value::Type::boolean;
    v.flag = raw == "true";
    return v;
  }
  try {
    size_t used = 0;
    v.num = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    v.type = Value::Type::number;
    return v;
  } catch (const std::exception&) {
    throw config_error("toml: line " + std::to_string(line_no) + ": cannot parse value '" + raw +
                       "'");
  }
}

Value parse_value(const std::string& raw, int line_no) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']')
      throw config_error("toml: line " + std::to_string(line_no) + ": unterminated array");
    Value v;
    v.type = Value::Type::array;
    const std::string inner = strip(raw.substr(1, raw.size() - 2));
    if (inner.empty()) return v;
    size_t start = 0;
    bool in_string = false;
    for (size_t i = 0; i <= inner.size(); ++i) {
      if (i < inner.size() && inner[i] == '"') in_string = !in_string;
      if (i == inner.size() || (inner[i] == ',' && !in_string)) {
        v.array.push_back(parse_scalar(strip(inner.substr(start, i - start)), line_no));
        start = i + 1;
      }
    }
    return v;
  }
  return parse_scalar(raw, line_no);
}

}  // namespace

Document parse(const std::string& text) {
  Document doc;
  std::istringstream in(text);
  std::string line;
  std::string prefix;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error("toml: line " + std::to_string(line_no) + ": bad table header");
      prefix = strip(line.substr(1, line.size() - 2));
      if (prefix.empty())
        throw config_error("toml: line " + std::to_string(line_no) + ": empty table name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("toml: line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = strip(line.substr(0, eq));
    const std::string raw = strip(line.substr(eq + 1));
    if (key.empty() || raw.empty())
      throw config_error("toml: line " + std::to_string(line_no) + ": empty key or value");
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (doc.count(full))
      throw config_error("toml: line " + std::to_string(line_no) + ": duplicate key '" + full +
                         "'");
    doc[full] = parse_value(raw, line_no);
  }
  return doc;
}

Document parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("toml: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

const Value* Reader::take(const std::string& key) {
  auto it = doc_.find(key);
  if (it == doc_.end()) return nullptr;
  used_[key] = true;
  return &it->second;
}

std::string Reader::get_string(const std::string& key, const std::string& fallback) {
  const Value* v = take(key);
  if (!v) return fallback;
  if (v->type != Value::Type::string) throw config_error("config: '" + key + "' must be a string");
  return v->str;
}

real Reader::get_real(const std::string& key, real fallback) {
  const Value* v = take(key);
  if (!v) return fallback;
  if (v->type != Value::Type::number) throw config_error("config: '" + key + "' must be a number");
  return v->num;
}

int Reader::get_int(const std::string& key, int fallback) {
  return static_cast<int>(get_i64(key, fallback));
}

int64_t Reader::get_i64(const std::string& key, int64_t fallback) {
  const Value* v = take(key);
  if (!v) return fallback;
  if (v->type != Value::Type::number || v->num != std::floor(v->num))
    throw config_error("config: '" + key + "' must be an integer");
  return static_cast<int64_t>(v->num);
}

bool Reader::get_bool(const std::string& key, bool fallback) {
  const Value* v = take(key);
  if (!v) return fallback;
  if (v->type != Value::Type::boolean)
    throw config_error("config: '" + key + "' must be a boolean");
  return v->flag;
}

std::vector<int> Reader::get_int_array(const std::string& key, std::vector<int> fallback) {
  const Value* v = take(key);
  if (!v) return fallback;
  if (v->type != Value::Type::array)
    throw config_error("config: '" + key + "' must be an array");
  std::vector<int> out;
  for (const auto& e : v->array) {
    if (e.type != Value::Type::number || e.num != std::floor(e.num))
      throw config_error("config: '" + key + "' must contain integers");
    out.push_back(static_cast<int>(e.num));
  }
  return out;
}

void Reader::reject_unknown() const {
  for (const auto& [key, value] : doc_)
    if (!used_.count(key))
      throw config_error("config: unknown key '" + key + "'");
}

}  // namespace sprt::toml
