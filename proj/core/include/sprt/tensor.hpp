// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sprt/common.hpp"

namespace sprt {

/// Dense row-major tensor of doubles. The workhorse value type for maps,
/// network weights and gradients. Convention for feature maps is [C, H, W].
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int64_t> s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {
    require(static_cast<int64_t>(data.size()) == numel_of(shape), "tensor data/shape mismatch");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  real& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  real at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
  real& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  real at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  real& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  real at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(real v) { std::fill(data.begin(), data.end(), v); }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, real v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  /// Round every element through float32 (the storage dtype).
  void quantize_storage() {
    for (real& x : data) x = to_storage_precision(x);
  }
};

inline bool all_finite(const Tensor& t) {
  for (real x : t.data)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace sprt
