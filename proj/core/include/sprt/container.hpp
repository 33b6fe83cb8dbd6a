// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sprt/tensor.hpp"

namespace sprt {

/// Binary tensor container. Layout (all little-endian):
///   magic "SPRT" | format version u32 | entries...
/// Each entry:
///   name length u16 | name bytes (UTF-8) | dtype u8 | rank u8 | dims u64[rank] | payload
/// dtype tags: 0 = f32, 1 = i64, 2 = u8.
class TensorContainer {
 public:
  enum class Dtype : uint8_t { f32 = 0, i64 = 1, u8 = 2 };

  static constexpr uint32_t kFormatVersion = 1;

  struct Entry {
    Dtype dtype;
    std::vector<uint64_t> dims;
    std::vector<uint8_t> bytes;  // raw little-endian payload

    uint64_t numel() const {
      uint64_t n = 1;
      for (uint64_t d : dims) n *= d;
      return n;
    }
  };

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }

  // Typed setters. Tensor values are narrowed to f32 on insertion.
  void set_tensor(const std::string& name, const Tensor& t);
  void set_i64(const std::string& name, const std::vector<int64_t>& v);
  void set_u8(const std::string& name, const std::vector<uint8_t>& v);
  void set_string(const std::string& name, const std::string& s);  // stored as u8

  Tensor get_tensor(const std::string& name) const;  // f32 -> double
  std::vector<int64_t> get_i64(const std::string& name) const;
  std::vector<uint8_t> get_u8(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  std::vector<uint8_t> serialize() const;
  static TensorContainer deserialize(const std::vector<uint8_t>& bytes);

  void save(const std::string& path) const;
  static TensorContainer load(const std::string& path);

 private:
  void insert(const std::string& name, Entry e);
  // std::map keeps serialization order independent of insertion order.
  std::map<std::string, Entry> entries_;
};

}  // namespace sprt
