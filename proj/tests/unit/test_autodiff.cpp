// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sprt/graph_ops.hpp"
#include "sprt/nn.hpp"
#include "sprt/rng.hpp"

using namespace sprt;
using namespace sprt::ad;

namespace {

/// Finite-difference check of d(scalar node)/d(leaf tensor) for every element.
void check_gradient(const std::function<int(Tape&, int)>& build, Tensor leaf, real tol = 1e-5,
                    real step = 1e-5) {
  Tape t0;
  const int p0 = t0.param(leaf);
  const int loss0 = build(t0, p0);
  t0.backward(loss0);
  const Tensor analytic = t0.grad(p0);

  for (int64_t i = 0; i < leaf.numel(); ++i) {
    auto f = [&](real v) {
      Tensor x = leaf;
      x[i] = v;
      Tape t;
      const int p = t.param(x);
      return t.value(build(t, p))[0];
    };
    const real fd = testing::central_difference(f, leaf[i], step);
    CHECK(std::abs(fd - analytic[i]) < tol * std::max(1.0, std::abs(fd)));
  }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(51);
  Tensor x({2, 3});
  for (auto& v : x.data) v = rng.normal() + 2.5;  // keep sqrt/div well-defined

  check_gradient([](Tape& t, int p) { return t.mean(t.square(p)); }, x);
  check_gradient([](Tape& t, int p) { return t.sum(t.abs(p)); }, x);
  check_gradient([](Tape& t, int p) { return t.sum(t.sqrt(p)); }, x);
  check_gradient([](Tape& t, int p) { return t.mean(t.silu(p)); }, x);
  check_gradient([](Tape& t, int p) { return t.sum(t.mul(p, t.add_const(p, 1.5))); }, x);
  check_gradient(
      [](Tape& t, int p) { return t.sum(t.div(t.add_const(p, 5.0), t.scale(p, 2.0))); }, x);
}

TEST_CASE("structural op gradients") {
  Rng rng(52);
  Tensor x({2, 4, 4});
  for (auto& v : x.data) v = rng.normal();

  check_gradient(
      [](Tape& t, int p) {
        int rows = t.chw_to_rows(p);
        int back = t.rows_to_chw(rows, 4, 4);
        int sl = t.slice_ch(back, 1, 2);
        return t.sum(t.square(sl));
      },
      x);
  check_gradient(
      [](Tape& t, int p) {
        int cat = t.concat_ch(p, t.scale(p, 2.0));
        return t.mean(t.square(cat));
      },
      x);
  check_gradient([](Tape& t, int p) { return t.sum(t.square(t.global_avg_pool(p))); }, x);

  Tensor rows({3, 2});
  for (auto& v : rows.data) v = rng.normal();
  check_gradient(
      [](Tape& t, int p) { return t.sum(t.square(t.concat_rows(p, t.scale(p, -1.0)))); }, rows);
  Tensor col({5});
  for (auto& v : col.data) v = rng.normal();
  check_gradient([](Tape& t, int p) { return t.sum(t.square(t.repeat_cols(p, 3))); }, col);
}

TEST_CASE("conv2d forward shapes and gradients") {
  Rng rng(53);
  Tensor x({3, 6, 6});
  for (auto& v : x.data) v = rng.normal();
  Tensor w = nn::conv_weight_init(rng, 4, 3, 3, 3);
  Tensor b({4});
  for (auto& v : b.data) v = 0.1 * rng.normal();

  {
    Tape t;
    int y = nn::conv2d(t, t.constant(x), t.constant(w), t.constant(b), 1, 1);
    CHECK(t.value(y).shape == std::vector<int64_t>{4, 6, 6});
    int y2 = nn::conv2d(t, t.constant(x), t.constant(w), t.constant(b), 2, 1);
    CHECK(t.value(y2).shape == std::vector<int64_t>{4, 3, 3});
  }

  // d/dx
  check_gradient(
      [&](Tape& t, int p) {
        int y = nn::conv2d(t, p, t.constant(w), t.constant(b), 2, 1);
        return t.mean(t.square(y));
      },
      x, 1e-4);
  // d/dw
  check_gradient(
      [&](Tape& t, int p) {
        int y = nn::conv2d(t, t.constant(x), p, t.constant(b), 1, 1);
        return t.mean(t.square(y));
      },
      w, 1e-4);
  // d/db
  check_gradient(
      [&](Tape& t, int p) {
        int y = nn::conv2d(t, t.constant(x), t.constant(w), p, 1, 1);
        return t.mean(t.square(y));
      },
      b, 1e-4);
}

TEST_CASE("conv2d matches a naive direct convolution") {
  Rng rng(54);
  Tensor x({2, 5, 5});
  for (auto& v : x.data) v = rng.normal();
  Tensor w = nn::conv_weight_init(rng, 3, 2, 3, 3);
  Tensor b({3});
  for (auto& v : b.data) v = rng.normal();
  Tape t;
  const Tensor& y = t.value(nn::conv2d(t, t.constant(x), t.constant(w), t.constant(b), 1, 1));

  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        real acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
              acc += x.at(ci, iy, ix) * w.at(co, ci, ky, kx);
            }
        CHECK(y.at(co, oy, ox) == doctest::Approx(acc).epsilon(1e-9));
      }
}

TEST_CASE("upsample2x and separable filter gradients") {
  Rng rng(55);
  Tensor x({2, 4, 4});
  for (auto& v : x.data) v = rng.normal();
  check_gradient(
      [](Tape& t, int p) { return t.mean(t.square(nn::upsample2x(t, p))); }, x, 1e-5);

  Tensor img({1, 14, 14});
  for (auto& v : img.data) v = rng.normal();
  const std::vector<real> kernel = {0.25, 0.5, 0.25};
  check_gradient(
      [&](Tape& t, int p) {
        return t.mean(t.square(nn::separable_filter_valid(t, p, kernel)));
      },
      img, 1e-5);
}

TEST_CASE("bilinear gather and nn distance gradients") {
  Rng rng(56);
  Tensor map({3, 6, 6});
  for (auto& v : map.data) v = rng.normal();
  std::vector<Eigen::Vector2d> uv;
  for (int i = 0; i < 5; ++i) uv.emplace_back(rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85));

  check_gradient(
      [&](Tape& t, int p) { return t.sum(t.square(graph::bilinear_gather(t, p, uv))); }, map,
      1e-5);

  Tensor pts({6, 3});
  for (auto& v : pts.data) v = rng.normal();
  check_gradient(
      [&](Tape& t, int p) { return t.sum(t.square(graph::nn_log_distance(t, p))); }, pts, 1e-4);
}

TEST_CASE("tangent frame quaternion gradients match finite differences") {
  Rng rng(57);
  Tensor map({3, 8, 8});
  for (auto& v : map.data) v = rng.normal();
  std::vector<Eigen::Vector2d> uv = {{0.4, 0.45}, {0.6, 0.5}};
  Tensor weights({2, 4});
  for (auto& v : weights.data) v = rng.normal();

  check_gradient(
      [&](Tape& t, int p) {
        int q = graph::tangent_frame_quats(t, p, uv);
        return t.sum(t.mul(q, t.constant(weights)));
      },
      map, 2e-4, 1e-6);
}

TEST_CASE("compose_axis_angle gradients") {
  Rng rng(58);
  Tensor aa({3, 3});
  for (auto& v : aa.data) v = 0.5 * rng.normal();
  Tensor base({3, 4});
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    for (int a = 0; a < 4; ++a) base.at(i, a) = q(a);
  }
  Tensor weights({3, 4});
  for (auto& v : weights.data) v = rng.normal();

  check_gradient(
      [&](Tape& t, int p) {
        int q = graph::compose_axis_angle(t, p, t.constant(base));
        return t.sum(t.mul(q, t.constant(weights)));
      },
      aa, 1e-4);
  check_gradient(
      [&](Tape& t, int p) {
        int q = graph::compose_axis_angle(t, t.constant(aa), p);
        return t.sum(t.mul(q, t.constant(weights)));
      },
      base, 1e-4);
  // Near-zero axis-angle still differentiates smoothly.
  Tensor tiny({2, 3});
  for (auto& v : tiny.data) v = 1e-7 * rng.normal();
  Tensor base2({2, 4});
  base2.at(0, 0) = 1.0;
  base2.at(1, 0) = 1.0;
  Tensor w2({2, 4});
  for (auto& v : w2.data) v = rng.normal();
  check_gradient(
      [&](Tape& t, int p) {
        int q = graph::compose_axis_angle(t, p, t.constant(base2));
        return t.sum(t.mul(q, t.constant(w2)));
      },
      tiny, 1e-4);
}

TEST_CASE("rigid_points and quat_left_multiply gradients") {
  Rng rng(59);
  Eigen::Matrix3d rot =
      Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  Tensor pts({4, 3});
  for (auto& v : pts.data) v = rng.normal();
  check_gradient(
      [&](Tape& t, int p) {
        int y = graph::rigid_points(t, p, rot, Eigen::Vector3d(0.1, -0.2, 0.3));
        return t.sum(t.square(y));
      },
      pts);

  Tensor quats({4, 4});
  for (auto& v : quats.data) v = rng.normal();
  Eigen::Vector4d left(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  left.normalize();
  check_gradient(
      [&](Tape& t, int p) {
        return t.sum(t.square(graph::quat_left_multiply(t, p, left)));
      },
      quats);
}

TEST_CASE("vector quantize: nearest entries, idempotence, straight-through") {
  Rng rng(60);
  Tensor codebook({256, 8});
  for (auto& v : codebook.data) v = rng.normal();

  SUBCASE("exact-entry input quantizes to itself with zero losses") {
    Tensor z({1, 8});
    for (int a = 0; a < 8; ++a) z.at(0, a) = codebook.at(5, a);
    Tape t;
    auto vq = graph::vector_quantize(t, t.constant(z), t.constant(codebook), true);
    CHECK(vq.indices == std::vector<int>{5});
    CHECK(t.value(vq.codebook_loss)[0] == 0.0);
    CHECK(t.value(vq.commitment_loss)[0] == 0.0);
    for (int a = 0; a < 8; ++a) CHECK(t.value(vq.quantized).at(0, a) == codebook.at(5, a));
  }

  SUBCASE("nearest by inspection") {
    Tensor book({2, 2});
    book.at(1, 0) = 1.0;
    book.at(1, 1) = 1.0;
    Tensor z({1, 2});
    z.at(0, 0) = 0.2;
    z.at(0, 1) = 0.1;
    Tape t;
    auto vq = graph::vector_quantize(t, t.constant(z), t.constant(book), true);
    CHECK(vq.indices == std::vector<int>{0});
  }

  SUBCASE("1000 random codes match the brute-force scan") {
    Tensor z({1000, 8});
    for (auto& v : z.data) v = rng.normal();
    Tape t;
    auto vq = graph::vector_quantize(t, t.constant(z), t.constant(codebook), true);
    for (int i = 0; i < 1000; ++i)
      CHECK(vq.indices[static_cast<size_t>(i)] ==
            testing::brute_force_nearest(codebook, z.data.data() + 8 * i, 8));
  }

  SUBCASE("quantize of quantize is idempotent with zero losses") {
    Tensor z({32, 8});
    for (auto& v : z.data) v = rng.normal();
    Tape t;
    auto vq1 = graph::vector_quantize(t, t.constant(z), t.constant(codebook), true);
    auto vq2 = graph::vector_quantize(t, vq1.quantized, t.constant(codebook), true);
    CHECK(t.value(vq2.codebook_loss)[0] == 0.0);
    CHECK(t.value(vq2.commitment_loss)[0] == 0.0);
    CHECK(vq1.indices == vq2.indices);
    for (int64_t i = 0; i < t.value(vq1.quantized).numel(); ++i)
      CHECK(t.value(vq1.quantized)[i] == t.value(vq2.quantized)[i]);
  }

  SUBCASE("straight-through: injected gradient reaches z unchanged") {
    Tensor z({4, 8});
    for (auto& v : z.data) v = rng.normal();
    Tape t;
    const int zp = t.param(z);
    auto vq = graph::vector_quantize(t, zp, t.constant(codebook), true);
    Tensor upstream({4, 8});
    for (auto& v : upstream.data) v = rng.normal();
    t.backward_with(vq.quantized, upstream);
    const Tensor& gz = t.grad(zp);
    for (int64_t i = 0; i < gz.numel(); ++i) CHECK(gz[i] == upstream[i]);
  }

  SUBCASE("commitment gradient pulls z toward its entry; codebook loss moves entries") {
    Tensor z({4, 8});
    for (auto& v : z.data) v = rng.normal();
    Tape t;
    const int zp = t.param(z);
    const int cb = t.param(codebook);
    auto vq = graph::vector_quantize(t, zp, cb, true);
    t.backward(vq.commitment_loss);
    const Tensor& gz = t.grad(zp);
    for (int i = 0; i < 4; ++i) {
      const int k = vq.indices[static_cast<size_t>(i)];
      for (int a = 0; a < 8; ++a)
        CHECK(gz.at(i, a) ==
              doctest::Approx(2.0 * (z.at(i, a) - codebook.at(k, a)) / 32.0));
    }
    // Codebook loss gradient goes only to the codebook.
    Tape t2;
    const int zp2 = t2.param(z);
    const int cb2 = t2.param(codebook);
    auto vq2 = graph::vector_quantize(t2, zp2, cb2, true);
    t2.backward(vq2.codebook_loss);
    for (real v : t2.grad(zp2).data) CHECK(v == 0.0);
    real nonzero = 0;
    for (real v : t2.grad(cb2).data) nonzero += std::abs(v);
    CHECK(nonzero > 0.0);
  }

  SUBCASE("pass-through mode") {
    Tensor z({4, 8});
    for (auto& v : z.data) v = rng.normal();
    Tape t;
    const int zp = t.param(z);
    auto vq = graph::vector_quantize(t, zp, t.constant(codebook), false);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(t.value(vq.quantized)[i] == z[i]);
    CHECK(t.value(vq.codebook_loss)[0] == 0.0);
  }
}

TEST_CASE("rasterize op plugs into the tape with correct gradients") {
  Rng rng(61);
  splatter::Camera cam;
  cam.width = cam.height = 12;
  cam.fx = cam.fy = 12;
  cam.cx = cam.cy = 6;
  cam.near_clip = 0.1;
  cam.far_clip = 50;

  const int n = 3;
  Tensor pos({n, 3}), quat({n, 4}), ls({n, 3}), logit({n}), sh({n, 48});
  for (int i = 0; i < n; ++i) {
    pos.at(i, 0) = 0.3 * rng.normal();
    pos.at(i, 1) = 0.3 * rng.normal();
    pos.at(i, 2) = 4.0 + 0.3 * rng.normal();
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    for (int a = 0; a < 4; ++a) quat.at(i, a) = q(a);
    for (int a = 0; a < 3; ++a) ls.at(i, a) = std::log(0.3);
    logit[i] = 0.5;
    sh.at(i, 0) = 0.4 * rng.normal();
  }
  Tensor upstream({3, 12, 12});
  for (auto& v : upstream.data) v = rng.normal() / 100.0;

  auto build = [&](Tape& t, int p) {
    auto node = graph::rasterize(t, p, t.constant(quat), t.constant(ls), t.constant(logit),
                                 t.constant(sh), cam, {1, 1, 1});
    return t.sum(t.mul(node.image, t.constant(upstream)));
  };
  check_gradient(build, pos, 2e-3, 1e-4);
}
