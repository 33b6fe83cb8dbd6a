// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sprt {

/// All core numerics run in double precision; files store float32.
using real = double;

/// Bad CLI flags, malformed or contradictory configuration. CLI exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing/corrupt datasets, containers, images. CLI exit code 3.
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where the pipeline cannot continue. CLI exit code 4.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Round through float32, the on-disk precision. Data that is going to be
/// persisted is pushed through this before use so that regenerating from the
/// stored values is bit-exact.
inline real to_storage_precision(real x) { return static_cast<real>(static_cast<float>(x)); }

}  // namespace sprt
