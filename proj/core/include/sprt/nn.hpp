// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sprt/autodiff.hpp"
#include "sprt/rng.hpp"

namespace sprt::nn {

/// C[MxN] += A[MxK] * B[KxN], row-major. Accumulation order over k is fixed,
/// so results do not depend on how callers partition M.
void gemm_acc(int64_t m, int64_t n, int64_t k, const real* a, const real* b, real* c);

/// C[MxK] += A[MxN] * B[KxN]^T (row-dot-row form, used for weight gradients).
void gemm_nt_acc(int64_t m, int64_t k, int64_t n, const real* a, const real* b, real* c);

/// 2D convolution on [C,H,W] with weight [Cout,Cin,kh,kw] and bias [Cout].
/// Zero padding `pad`, square stride. Differentiable w.r.t. x, w, b.
int conv2d(ad::Tape& t, int x, int w, int b, int stride, int pad);

/// Nearest-neighbor 2x upsample on [C,H,W].
int upsample2x(ad::Tape& t, int x);

/// Depthwise separable blur with an arbitrary 1D kernel, valid padding
/// (output shrinks by len-1 per axis). The kernel is a constant.
int separable_filter_valid(ad::Tape& t, int x, const std::vector<real>& kernel1d);

/// He-style normal init for a conv weight tensor [Cout,Cin,kh,kw].
Tensor conv_weight_init(Rng& rng, int64_t c_out, int64_t c_in, int64_t kh, int64_t kw);

}  // namespace sprt::nn
