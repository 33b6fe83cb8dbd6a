// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "sprt/tensor.hpp"

namespace sprt::ad {

/// Reverse-mode tape. Nodes are created in topological order; backward walks
/// ids in reverse. Values live on the tape so op closures only capture ids.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::function<void(Tape&)> backward;
  };

  int constant(Tensor t);
  int param(Tensor t);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a scalar node.
  void backward(int loss);

  /// Injects an arbitrary upstream gradient at `node` and propagates; used by
  /// gradient-contract tests.
  void backward_with(int node, const Tensor& upstream);

  // ---- generic ops ----
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int scale(int a, real k);
  int add_const(int a, real k);
  int neg(int a) { return scale(a, -1.0); }
  int abs(int a);
  int square(int a);
  int sqrt(int a);
  int silu(int a);
  int sum(int a);
  int mean(int a);
  int dot(int a, int b) { return sum(mul(a, b)); }

  /// Channel concat / slice for [C,H,W] maps.
  int concat_ch(int a, int b);
  int slice_ch(int a, int c0, int c1);

  /// Row concat for [m,k] matrices.
  int concat_rows(int a, int b);

  /// Same data, new shape (numel must match).
  int reshape(int a, std::vector<int64_t> shape);

  /// [C,H,W] -> [H*W, C] and back.
  int chw_to_rows(int a);
  int rows_to_chw(int a, int height, int width);

  /// Broadcast a column [m] (or [m,1]) to [m,k].
  int repeat_cols(int a, int k);

  /// Per-channel global average pool [C,H,W] -> [C].
  int global_avg_pool(int a);

  // ---- registration hooks for custom ops ----
  int make_node(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd);
  void set_backward(int id, std::function<void(Tape&)> bwd) {
    nodes_[static_cast<size_t>(id)].backward = std::move(bwd);
  }

  size_t size() const { return nodes_.size(); }

 private:
  friend int raw_grad_target(Tape&, int);
  std::vector<Node> nodes_;
};

}  // namespace sprt::ad
