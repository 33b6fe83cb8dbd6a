// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/nn.hpp"

#include <cmath>

#include "sprt/parallel.hpp"

namespace sprt::nn {

void gemm_acc(int64_t m, int64_t n, int64_t k, const real* a, const real* b, real* c) {
  parallel_for(m, [&](int64_t mb, int64_t me) {
    for (int64_t i = mb; i < me; ++i) {
      real* crow = c + i * n;
      const real* arow = a + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        const real av = arow[kk];
        if (av == 0.0) continue;
        const real* brow = b + kk * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void gemm_nt_acc(int64_t m, int64_t k, int64_t n, const real* a, const real* b, real* c) {
  parallel_for(m, [&](int64_t mb, int64_t me) {
    for (int64_t i = mb; i < me; ++i) {
      const real* arow = a + i * n;
      real* crow = c + i * k;
      for (int64_t j = 0; j < k; ++j) {
        const real* brow = b + j * n;
        real acc = 0;
        for (int64_t t = 0; t < n; ++t) acc += arow[t] * brow[t];
        crow[j] += acc;
      }
    }
  });
}

namespace {

struct ConvDims {
  int64_t c_in, h, w;
  int64_t c_out, kh, kw;
  int stride, pad;
  int64_t h_out, w_out;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  require(x.rank() == 3, "conv2d: input must be [C,H,W]");
  require(w.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw]");
  require(w.dim(1) == x.dim(0), "conv2d: channel mismatch");
  ConvDims d;
  d.c_in = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.c_out = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.h_out = (d.h + 2 * pad - d.kh) / stride + 1;
  d.w_out = (d.w + 2 * pad - d.kw) / stride + 1;
  require(d.h_out >= 1 && d.w_out >= 1, "conv2d: output would be empty");
  return d;
}

/// col is [Cin*kh*kw, Hout*Wout].
void im2col(const Tensor& x, const ConvDims& d, std::vector<real>& col) {
  const int64_t cols = d.h_out * d.w_out;
  col.assign(static_cast<size_t>(d.c_in * d.kh * d.kw * cols), 0.0);
  for (int64_t c = 0; c < d.c_in; ++c) {
    const real* plane = x.data.data() + c * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        real* crow = col.data() + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (int64_t oy = 0; oy < d.h_out; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const real* src = plane + iy * d.w;
          real* dst = crow + oy * d.w_out;
          for (int64_t ox = 0; ox < d.w_out; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

/// Scatter-add of a col-shaped gradient back onto the input.
void col2im_acc(const std::vector<real>& col, const ConvDims& d, Tensor& gx) {
  const int64_t cols = d.h_out * d.w_out;
  for (int64_t c = 0; c < d.c_in; ++c) {
    real* plane = gx.data.data() + c * d.h * d.w;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        const real* crow = col.data() + ((c * d.kh + ky) * d.kw + kx) * cols;
        for (int64_t oy = 0; oy < d.h_out; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          real* dst = plane + iy * d.w;
          const real* src = crow + oy * d.w_out;
          for (int64_t ox = 0; ox < d.w_out; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int conv2d(ad::Tape& t, int x, int w, int b, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  const ConvDims d = conv_dims(xv, wv, stride, pad);
  require(bv.rank() == 1 && bv.dim(0) == d.c_out, "conv2d: bias must be [Cout]");

  const int64_t cols = d.h_out * d.w_out;
  const int64_t kdim = d.c_in * d.kh * d.kw;
  std::vector<real> col;
  im2col(xv, d, col);

  Tensor out({d.c_out, d.h_out, d.w_out});
  for (int64_t co = 0; co < d.c_out; ++co) {
    real* dst = out.data.data() + co * cols;
    const real bias = bv[co];
    for (int64_t i = 0; i < cols; ++i) dst[i] = bias;
  }
  gemm_acc(d.c_out, cols, kdim, wv.data.data(), col.data(), out.data.data());

  const bool needs = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  if (!needs) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  auto bwd = [id, x, w, b, d, cols, kdim](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad(b);
      for (int64_t co = 0; co < d.c_out; ++co) {
        real acc = 0;
        const real* grow = g.data.data() + co * cols;
        for (int64_t i = 0; i < cols; ++i) acc += grow[i];
        gb[co] += acc;
      }
    }
    if (tp.requires_grad(w)) {
      std::vector<real> col;
      im2col(tp.value(x), d, col);
      Tensor& gw = tp.grad(w);
      gemm_nt_acc(d.c_out, kdim, cols, g.data.data(), col.data(), gw.data.data());
    }
    if (tp.requires_grad(x)) {
      // dcol = W^T * dY, then scatter back.
      std::vector<real> dcol(static_cast<size_t>(kdim * cols), 0.0);
      const Tensor& wv = tp.value(w);
      // Partition over k-rows of dcol: each row reduces over Cout in order.
      parallel_for(kdim, [&](int64_t kb, int64_t ke) {
        for (int64_t kk = kb; kk < ke; ++kk) {
          real* drow = dcol.data() + kk * cols;
          for (int64_t co = 0; co < d.c_out; ++co) {
            const real wv_k = wv.data[static_cast<size_t>(co * kdim + kk)];
            if (wv_k == 0.0) continue;
            const real* grow = g.data.data() + co * cols;
            for (int64_t i = 0; i < cols; ++i) drow[i] += wv_k * grow[i];
          }
        }
      });
      col2im_acc(dcol, d, tp.grad(x));
    }
  };
  t.set_backward(id, std::move(bwd));
  return id;
}

int upsample2x(ad::Tape& t, int x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3, "upsample2x: expected [C,H,W]");
  const int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, h * 2, w * 2});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h * 2; ++y)
      for (int64_t xx = 0; xx < w * 2; ++xx)
        out[(ch * h * 2 + y) * w * 2 + xx] = xv[(ch * h + y / 2) * w + xx / 2];
  if (!t.requires_grad(x)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, x, c, h, w](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor& gx = tp.grad(x);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h * 2; ++y)
        for (int64_t xx = 0; xx < w * 2; ++xx)
          gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * h * 2 + y) * w * 2 + xx];
  });
  return id;
}

namespace {

/// One axis of the separable valid filter. horizontal=true filters along W.
Tensor filter_axis(const Tensor& x, const std::vector<real>& k, bool horizontal) {
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t klen = static_cast<int64_t>(k.size());
  const int64_t h_out = horizontal ? h : h - klen + 1;
  const int64_t w_out = horizontal ? w - klen + 1 : w;
  Tensor out({c, h_out, w_out});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h_out; ++y)
      for (int64_t xx = 0; xx < w_out; ++xx) {
        real acc = 0;
        for (int64_t i = 0; i < klen; ++i) {
          const int64_t sy = horizontal ? y : y + i;
          const int64_t sx = horizontal ? xx + i : xx;
          acc += k[static_cast<size_t>(i)] * x[(ch * h + sy) * w + sx];
        }
        out[(ch * h_out + y) * w_out + xx] = acc;
      }
  return out;
}

/// Adjoint of filter_axis: scatter g back through the kernel taps.
void filter_axis_bwd(const Tensor& g, const std::vector<real>& k, bool horizontal, Tensor& gx) {
  const int64_t c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const int64_t klen = static_cast<int64_t>(k.size());
  const int64_t h_out = horizontal ? h : h - klen + 1;
  const int64_t w_out = horizontal ? w - klen + 1 : w;
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h_out; ++y)
      for (int64_t xx = 0; xx < w_out; ++xx) {
        const real gv = g[(ch * h_out + y) * w_out + xx];
        if (gv == 0.0) continue;
        for (int64_t i = 0; i < klen; ++i) {
          const int64_t sy = horizontal ? y : y + i;
          const int64_t sx = horizontal ? xx + i : xx;
          gx[(ch * h + sy) * w + sx] += k[static_cast<size_t>(i)] * gv;
        }
      }
}

}  // namespace

int separable_filter_valid(ad::Tape& t, int x, const std::vector<real>& kernel1d) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 3, "separable_filter: expected [C,H,W]");
  require(xv.dim(1) >= static_cast<int64_t>(kernel1d.size()) &&
              xv.dim(2) >= static_cast<int64_t>(kernel1d.size()),
          "separable_filter: image smaller than window");
  Tensor mid = filter_axis(xv, kernel1d, true);
  Tensor out = filter_axis(mid, kernel1d, false);
  if (!t.requires_grad(x)) return t.constant(std::move(out));
  Tensor mid_copy = mid;  // needed for shape only
  int id = t.make_node(std::move(out), true, nullptr);
  std::vector<int64_t> mid_shape = mid_copy.shape;
  t.set_backward(id, [id, x, kernel1d, mid_shape](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor gmid(mid_shape);
    filter_axis_bwd(g, kernel1d, false, gmid);
    filter_axis_bwd(gmid, kernel1d, true, tp.grad(x));
  });
  return id;
}

Tensor conv_weight_init(Rng& rng, int64_t c_out, int64_t c_in, int64_t kh, int64_t kw) {
  Tensor w({c_out, c_in, kh, kw});
  const real stddev = std::sqrt(2.0 / static_cast<real>(c_in * kh * kw));
  for (real& v : w.data) v = rng.normal(0.0, stddev);
  return w;
}

}  // namespace sprt::nn
