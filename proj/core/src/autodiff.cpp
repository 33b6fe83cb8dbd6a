// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/autodiff.hpp"

#include <cmath>

namespace sprt::ad {

int Tape::constant(Tensor t) { return make_node(std::move(t), false, nullptr); }
int Tape::param(Tensor t) { return make_node(std::move(t), true, nullptr); }

int Tape::make_node(Tensor value, bool requires_grad, std::function<void(Tape&)> bwd) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(bwd);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(int loss) {
  require(value(loss).numel() == 1, "backward: loss must be scalar");
  Tensor seed(value(loss).shape);
  seed.fill(1.0);
  backward_with(loss, seed);
}

void Tape::backward_with(int node, const Tensor& upstream) {
  require(upstream.shape == value(node).shape, "backward_with: upstream shape mismatch");
  grad(node) = upstream;
  for (int id = node; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.numel() == 0) continue;  // node not on a path to the seed
    n.backward(*this);
  }
}

namespace {
bool any_grad(const Tape& t, std::initializer_list<int> ids) {
  for (int id : ids)
    if (t.requires_grad(id)) return true;
  return false;
}
}  // namespace

int Tape::add(int a, int b) {
  require(value(a).shape == value(b).shape, "add: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += value(b)[i];
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  };
  return id;
}

int Tape::sub(int a, int b) {
  require(value(a).shape == value(b).shape, "sub: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= value(b)[i];
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  };
  return id;
}

int Tape::mul(int a, int b) {
  require(value(a).shape == value(b).shape, "mul: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= value(b)[i];
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      const Tensor& vb = t.value(b);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      const Tensor& va = t.value(a);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
    }
  };
  return id;
}

int Tape::div(int a, int b) {
  require(value(a).shape == value(b).shape, "div: shape mismatch");
  Tensor out = value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= value(b)[i];
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / vb[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
    }
  };
  return id;
}

int Tape::scale(int a, real k) {
  Tensor out = value(a);
  for (real& x : out.data) x *= k;
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, k](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += k * g[i];
  };
  return id;
}

int Tape::add_const(int a, real k) {
  Tensor out = value(a);
  for (real& x : out.data) x += k;
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  };
  return id;
}

int Tape::abs(int a) {
  Tensor out = value(a);
  for (real& x : out.data) x = std::abs(x);
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.value(a);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i)
      ga[i] += va[i] > 0 ? g[i] : (va[i] < 0 ? -g[i] : 0.0);
  };
  return id;
}

int Tape::square(int a) { return mul(a, a); }

int Tape::sqrt(int a) {
  Tensor out = value(a);
  for (real& x : out.data) x = std::sqrt(x);
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& v = t.value(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += 0.5 * g[i] / v[i];
  };
  return id;
}

int Tape::silu(int a) {
  Tensor out = value(a);
  for (real& x : out.data) x = x / (1.0 + std::exp(-x));
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.value(a);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const real s = 1.0 / (1.0 + std::exp(-va[i]));
      ga[i] += g[i] * s * (1.0 + va[i] * (1.0 - s));
    }
  };
  return id;
}

int Tape::sum(int a) {
  real acc = 0;
  for (real x : value(a).data) acc += x;
  Tensor out({1});
  out[0] = acc;
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const real g = t.grad(id)[0];
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  };
  return id;
}

int Tape::mean(int a) { return scale(sum(a), 1.0 / static_cast<real>(value(a).numel())); }

int Tape::concat_ch(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.rank() == 3 && vb.rank() == 3 && va.dim(1) == vb.dim(1) && va.dim(2) == vb.dim(2),
          "concat_ch: [C,H,W] maps with equal spatial dims");
  Tensor out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.data.begin(), va.data.end(), out.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.numel());
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    const int64_t na = t.value(a).numel();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
    }
  };
  return id;
}

int Tape::slice_ch(int a, int c0, int c1) {
  const Tensor& va = value(a);
  require(va.rank() == 3 && c0 >= 0 && c1 <= va.dim(0) && c0 < c1, "slice_ch: bad range");
  const int64_t plane = va.dim(1) * va.dim(2);
  Tensor out({c1 - c0, va.dim(1), va.dim(2)});
  std::copy(va.data.begin() + c0 * plane, va.data.begin() + c1 * plane, out.data.begin());
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, c0, plane](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[c0 * plane + i] += g[i];
  };
  return id;
}

int Tape::concat_rows(int a, int b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1),
          "concat_rows: [m,k] matrices with equal k");
  Tensor out({va.dim(0) + vb.dim(0), va.dim(1)});
  std::copy(va.data.begin(), va.data.end(), out.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.numel());
  if (!any_grad(*this, {a, b})) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, b](Tape& t) {
    const Tensor& g = t.grad(id);
    const int64_t na = t.value(a).numel();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
    }
  };
  return id;
}

int Tape::reshape(int a, std::vector<int64_t> shape) {
  const Tensor& va = value(a);
  require(Tensor::numel_of(shape) == va.numel(), "reshape: numel mismatch");
  Tensor out(std::move(shape), va.data);
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  };
  return id;
}

int Tape::chw_to_rows(int a) {
  const Tensor& va = value(a);
  require(va.rank() == 3, "chw_to_rows: expected [C,H,W]");
  const int64_t c = va.dim(0), plane = va.dim(1) * va.dim(2);
  Tensor out({plane, c});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t p = 0; p < plane; ++p) out[p * c + ch] = va[ch * plane + p];
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, c, plane](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < plane; ++p) ga[ch * plane + p] += g[p * c + ch];
  };
  return id;
}

int Tape::rows_to_chw(int a, int height, int width) {
  const Tensor& va = value(a);
  require(va.rank() == 2 && va.dim(0) == static_cast<int64_t>(height) * width,
          "rows_to_chw: rows/shape mismatch");
  const int64_t c = va.dim(1), plane = va.dim(0);
  Tensor out({c, height, width});
  for (int64_t p = 0; p < plane; ++p)
    for (int64_t ch = 0; ch < c; ++ch) out[ch * plane + p] = va[p * c + ch];
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, c, plane](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t p = 0; p < plane; ++p)
      for (int64_t ch = 0; ch < c; ++ch) ga[p * c + ch] += g[ch * plane + p];
  };
  return id;
}

int Tape::repeat_cols(int a, int k) {
  const Tensor& va = value(a);
  require(va.rank() == 1 || (va.rank() == 2 && va.dim(1) == 1), "repeat_cols: expected [m]");
  const int64_t m = va.dim(0);
  Tensor out({m, k});
  for (int64_t i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) out[i * k + j] = va[i];
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, m, k](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) ga[i] += g[i * k + j];
  };
  return id;
}

int Tape::global_avg_pool(int a) {
  const Tensor& va = value(a);
  require(va.rank() == 3, "global_avg_pool: expected [C,H,W]");
  const int64_t c = va.dim(0), plane = va.dim(1) * va.dim(2);
  Tensor out({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    real acc = 0;
    for (int64_t p = 0; p < plane; ++p) acc += va[ch * plane + p];
    out[ch] = acc / static_cast<real>(plane);
  }
  if (!requires_grad(a)) return constant(std::move(out));
  int id = make_node(std::move(out), true, nullptr);
  nodes_[static_cast<size_t>(id)].backward = [id, a, c, plane](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    for (int64_t ch = 0; ch < c; ++ch) {
      const real gv = g[ch] / static_cast<real>(plane);
      for (int64_t p = 0; p < plane; ++p) ga[ch * plane + p] += gv;
    }
  };
  return id;
}

}  // namespace sprt::ad
