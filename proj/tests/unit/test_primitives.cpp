// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sprt/primitives.hpp"
#include "sprt/rng.hpp"

using namespace sprt;
using namespace sprt::primitives;

namespace {

/// Position map encoding an affine function of (u,v).
uvmap::UvMap linear_position_map(int size, const Eigen::Vector3d& du, const Eigen::Vector3d& dv,
                                 const Eigen::Vector3d& origin = Eigen::Vector3d::Zero()) {
  uvmap::UvMap map(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const real u = (x + 0.5) / size;
      const real v = (y + 0.5) / size;
      const Eigen::Vector3d p = origin + u * du + v * dv;
      for (int c = 0; c < 3; ++c) map.at(x, y, c) = p(c);
    }
  std::fill(map.validity.begin(), map.validity.end(), 1);
  return map;
}

bool is_rotation_matrix(const Eigen::Matrix3d& r, real tol) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

}  // namespace

TEST_CASE("tangent frame on the plane phi(u,v) = (u, v, 0) is the identity") {
  auto map = linear_position_map(16, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  Eigen::Matrix3d r = tangent_frame(map, 0.5, 0.5);
  CHECK((r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tangent frame of phi(u,v) = (v, -u, 0) is a 90-degree rotation about z") {
  auto map = linear_position_map(16, Eigen::Vector3d(0, -1, 0), Eigen::Vector3d(1, 0, 0));
  Eigen::Matrix3d r = tangent_frame(map, 0.5, 0.5);
  // Analytic: T = (0,-1,0), B = (1,0,0), N = T x B = (0,0,1).
  Eigen::Matrix3d want;
  want << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  CHECK((r - want).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(is_rotation_matrix(r, 1e-9));
}

TEST_CASE("tangent frames are proper rotations on random smooth maps") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector3d du(rng.normal(), rng.normal(), rng.normal());
    Eigen::Vector3d dv(rng.normal(), rng.normal(), rng.normal());
    if (du.cross(dv).norm() < 1e-3) continue;
    auto map = linear_position_map(12, du, dv);
    bool degenerate = false;
    Eigen::Matrix3d r = tangent_frame(map, rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                      &degenerate);
    CHECK_FALSE(degenerate);
    CHECK(is_rotation_matrix(r, 1e-5));
  }
}

TEST_CASE("tangent frame falls back to identity on degenerate maps") {
  uvmap::UvMap map(8, 8, 3);  // all zeros
  std::fill(map.validity.begin(), map.validity.end(), 1);
  bool degenerate = false;
  Eigen::Matrix3d r = tangent_frame(map, 0.5, 0.5, &degenerate);
  CHECK(degenerate);
  CHECK((r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_part: two samples at distance d get scale d") {
  // Map where u<0.5 -> x=0 and u>0.5 -> x=d: a two-point grid.
  const real d = 0.37;
  uvmap::UvMap map(2, 1, 3);
  map.at(0, 0, 0) = 0.0;
  map.at(1, 0, 0) = d;
  std::fill(map.validity.begin(), map.validity.end(), 1);
  uvmap::SampleGrid grid;
  grid.region = "face";
  grid.grid_w = 2;
  grid.grid_h = 1;
  grid.uv = {Eigen::Vector2d(0.25, 0.5), Eigen::Vector2d(0.75, 0.5)};
  PartParams part = init_part(map, grid);
  for (int i = 0; i < 2; ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(activate_scale(part.log_scales.at(i, a)) == doctest::Approx(d));
}

TEST_CASE("init_part: every opacity activates to 0.7") {
  auto map = linear_position_map(8, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0.2, 0.2, 0.8, 0.8), 4, 4, 0.0);
  PartParams part = init_part(map, grid);
  CHECK(activate_opacity(part.opacity_logit) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("init_part: flat regular grid spacing becomes the interior scale") {
  // phi(u,v) = (u, v, 0) on a 8x8 grid inside [0,1]^2: spacing = 1/8.
  auto map = linear_position_map(32, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0, 0, 1, 1), 8, 8, 0.0);
  PartParams part = init_part(map, grid);
  const real spacing = 1.0 / 8.0;
  for (int i = 0; i < 64; ++i)
    CHECK(activate_scale(part.log_scales.at(i, 0)) == doctest::Approx(spacing).epsilon(1e-9));
}

TEST_CASE("init_part scale equals the all-pairs nearest-neighbor oracle") {
  Rng rng(32);
  uvmap::UvMap map(32, 32, 3);
  for (auto& x : map.data.data) x = rng.normal();
  std::fill(map.validity.begin(), map.validity.end(), 1);
  auto grid = uvmap::make_sample_grid("hair", Eigen::Vector4d(0.1, 0.1, 0.9, 0.9), 16, 16, 0.0);
  PartParams part = init_part(map, grid);
  const auto want = testing::brute_force_nn_distance(part.positions);
  for (int i = 0; i < part.size(); ++i) {
    const real expect = std::max(want[static_cast<size_t>(i)], kMinInitDistance);
    CHECK(activate_scale(part.log_scales.at(i, 0)) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("init_part: singleton grid falls back to the distance floor") {
  auto map = linear_position_map(8, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  uvmap::SampleGrid grid;
  grid.region = "face";
  grid.grid_w = grid.grid_h = 1;
  grid.uv = {Eigen::Vector2d(0.5, 0.5)};
  PartParams part = init_part(map, grid);
  CHECK(activate_scale(part.log_scales.at(0, 0)) == doctest::Approx(kMinInitDistance));
}

TEST_CASE("init_part: duplicate positions clamp to the floor") {
  uvmap::UvMap map(4, 4, 3);  // all-zero positions
  std::fill(map.validity.begin(), map.validity.end(), 1);
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0, 0, 1, 1), 2, 2, 0.0);
  InitDiagnostics diag;
  PartParams part = init_part(map, grid, &diag);
  CHECK(diag.clamped_distances == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(activate_scale(part.log_scales.at(i, 0)) == doctest::Approx(kMinInitDistance));
}

TEST_CASE("apply_offsets: zero offsets reproduce the base activations") {
  auto map = linear_position_map(16, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0.1, 0.1, 0.9, 0.9), 4, 4, 0.0);
  PartParams part = init_part(map, grid);
  const int m = part.size();
  Offsets zero{Tensor({m, 3}), Tensor({m, 3}), Tensor({m, 3}), Tensor({m})};
  GaussianSet g = apply_offsets(part, zero, Tensor({m, 16, 3}));
  for (int i = 0; i < m; ++i) {
    CHECK(activate_opacity(g.opacity_logits[i]) == doctest::Approx(0.7));
    for (int a = 0; a < 3; ++a) {
      CHECK(g.positions.at(i, a) == part.positions.at(i, a));
      CHECK(g.log_scales.at(i, a) == part.log_scales.at(i, a));
    }
    for (int a = 0; a < 4; ++a)
      CHECK(g.rotations.at(i, a) == doctest::Approx(part.rotations.at(i, a)).epsilon(1e-12));
  }
}

TEST_CASE("apply_offsets: constant position offset shifts all positions") {
  auto map = linear_position_map(16, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0.1, 0.1, 0.9, 0.9), 3, 3, 0.0);
  PartParams part = init_part(map, grid);
  const int m = part.size();
  Offsets off{Tensor({m, 3}), Tensor({m, 3}), Tensor({m, 3}), Tensor({m})};
  for (int i = 0; i < m; ++i) off.dpos.at(i, 0) = 1.0;
  GaussianSet g = apply_offsets(part, off, Tensor({m, 16, 3}));
  for (int i = 0; i < m; ++i) {
    CHECK(g.positions.at(i, 0) == doctest::Approx(part.positions.at(i, 0) + 1.0));
    CHECK(g.positions.at(i, 1) == part.positions.at(i, 1));
  }
}

TEST_CASE("apply_offsets matches an elementwise scalar oracle") {
  Rng rng(33);
  auto map = linear_position_map(16, Eigen::Vector3d(1, 0.2, 0), Eigen::Vector3d(0, 1, 0.3));
  auto grid = uvmap::make_sample_grid("face", Eigen::Vector4d(0.1, 0.1, 0.9, 0.9), 3, 3, 0.0);
  PartParams part = init_part(map, grid);
  const int m = part.size();
  Offsets off{Tensor({m, 3}), Tensor({m, 3}), Tensor({m, 3}), Tensor({m})};
  Tensor sh({m, 16, 3});
  for (auto& x : off.dpos.data) x = 0.1 * rng.normal();
  for (auto& x : off.drot.data) x = 0.3 * rng.normal();
  for (auto& x : off.dlog_scale.data) x = 0.2 * rng.normal();
  for (auto& x : off.dlogit.data) x = 0.5 * rng.normal();
  for (auto& x : sh.data) x = rng.normal();
  GaussianSet g = apply_offsets(part, off, sh);

  for (int i = 0; i < m; ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(testing::rel_err(g.positions.at(i, a),
                             part.positions.at(i, a) + off.dpos.at(i, a)) < 1e-6);
      CHECK(testing::rel_err(g.log_scales.at(i, a),
                             part.log_scales.at(i, a) + off.dlog_scale.at(i, a)) < 1e-6);
    }
    CHECK(testing::rel_err(g.opacity_logits[i], part.opacity_logit + off.dlogit[i]) < 1e-6);
    // Quaternion: explicit Hamilton product of the axis-angle rotation.
    const Eigen::Vector3d aa(off.drot.at(i, 0), off.drot.at(i, 1), off.drot.at(i, 2));
    const real angle = aa.norm();
    Eigen::Vector4d dq(std::cos(angle / 2), 0, 0, 0);
    if (angle > 0) {
      const Eigen::Vector3d axis = aa / angle * std::sin(angle / 2);
      dq = Eigen::Vector4d(std::cos(angle / 2), axis.x(), axis.y(), axis.z());
    }
    const Eigen::Vector4d base(part.rotations.at(i, 0), part.rotations.at(i, 1),
                               part.rotations.at(i, 2), part.rotations.at(i, 3));
    Eigen::Vector4d want(
        dq(0) * base(0) - dq(1) * base(1) - dq(2) * base(2) - dq(3) * base(3),
        dq(0) * base(1) + dq(1) * base(0) + dq(2) * base(3) - dq(3) * base(2),
        dq(0) * base(2) - dq(1) * base(3) + dq(2) * base(0) + dq(3) * base(1),
        dq(0) * base(3) + dq(1) * base(2) - dq(2) * base(1) + dq(3) * base(0));
    want.normalize();
    for (int a = 0; a < 4; ++a) CHECK(std::abs(g.rotations.at(i, a) - want(a)) < 1e-6);
    // Unit norm invariant.
    Eigen::Vector4d q(g.rotations.at(i, 0), g.rotations.at(i, 1), g.rotations.at(i, 2),
                      g.rotations.at(i, 3));
    CHECK(std::abs(q.norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("eval_sh: zero coefficients give mid gray") {
  Tensor h({16, 3});
  Eigen::Vector3d c = eval_sh(h, Eigen::Vector3d(0, 0, 1));
  CHECK(c(0) == doctest::Approx(0.5));
  CHECK(c(1) == doctest::Approx(0.5));
  CHECK(c(2) == doctest::Approx(0.5));
}

TEST_CASE("eval_sh: DC coefficient 1/Y00 raises one channel to 1.5") {
  Tensor h({16, 3});
  h.at(0, 0) = 1.0 / 0.2820948;
  Eigen::Vector3d c = eval_sh(h, Eigen::Vector3d(1, 0, 0));
  CHECK(c(0) == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(c(1) == doctest::Approx(0.5));
}

TEST_CASE("eval_sh: band-1 z coefficient flips sign between +z and -z") {
  Tensor h({16, 3});
  const real coeff = 0.8;
  h.at(2, 1) = coeff;  // the z-linear band-1 slot
  Eigen::Vector3d up = eval_sh(h, Eigen::Vector3d(0, 0, 1));
  Eigen::Vector3d down = eval_sh(h, Eigen::Vector3d(0, 0, -1));
  CHECK(up(1) - down(1) == doctest::Approx(2.0 * 0.4886025 * coeff).epsilon(1e-6));
}

TEST_CASE("eval_sh is linear in the coefficients") {
  Rng rng(34);
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  Tensor h1({16, 3}), h2({16, 3}), h12({16, 3});
  for (int64_t i = 0; i < h1.numel(); ++i) {
    h1[i] = rng.normal();
    h2[i] = rng.normal();
    h12[i] = h1[i] + h2[i];
  }
  Eigen::Vector3d c1 = eval_sh(h1, dir), c2 = eval_sh(h2, dir), c12 = eval_sh(h12, dir);
  for (int a = 0; a < 3; ++a)
    CHECK(c12(a) - 0.5 == doctest::Approx((c1(a) - 0.5) + (c2(a) - 0.5)).epsilon(1e-9));
}

TEST_CASE("eval_sh rejects non-unit directions") {
  Tensor h({16, 3});
  CHECK_THROWS_AS(eval_sh(h, Eigen::Vector3d(0, 0, 2)), std::invalid_argument);
}

TEST_CASE("sh basis gradients match finite differences") {
  Rng rng(35);
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  real grad[16][3];
  sh_basis_grad(dir, grad);
  for (int k = 0; k < 16; ++k)
    for (int a = 0; a < 3; ++a) {
      auto f = [&](real x) {
        Eigen::Vector3d d = dir;
        d(a) = x;  // off the sphere; the basis is a polynomial in R^3
        real vals[16];
        sh_basis(d, vals);
        return vals[k];
      };
      const real fd = testing::central_difference(f, dir(a), 1e-5);
      CHECK(std::abs(fd - grad[k][a]) < 1e-6);
    }
}

TEST_CASE("to_world: identity pose leaves the set unchanged") {
  GaussianSet g = GaussianSet::sized(3);
  g.positions.at(1, 0) = 2.0;
  GaussianSet w = to_world(g, geometry::RigidTransform::identity());
  for (int64_t i = 0; i < g.positions.numel(); ++i) CHECK(w.positions[i] == g.positions[i]);
  for (int64_t i = 0; i < g.rotations.numel(); ++i)
    CHECK(w.rotations[i] == doctest::Approx(g.rotations[i]));
}

TEST_CASE("to_world: pure translation shifts positions only") {
  GaussianSet g = GaussianSet::sized(2);
  geometry::RigidTransform t;
  t.translation = Eigen::Vector3d(1, 2, 3);
  GaussianSet w = to_world(g, t);
  CHECK(w.positions.at(0, 0) == 1.0);
  CHECK(w.positions.at(0, 1) == 2.0);
  CHECK(w.positions.at(0, 2) == 3.0);
  CHECK(w.rotations.at(0, 0) == doctest::Approx(1.0));
  CHECK(w.rotations.at(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("rotation/quaternion conversions round-trip") {
  Rng rng(36);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    Eigen::Matrix3d r =
        Eigen::AngleAxisd(rng.uniform(-3.1, 3.1), axis.normalized()).toRotationMatrix();
    Eigen::Vector4d q = rotation_to_quaternion(r);
    CHECK(std::abs(q.norm() - 1.0) < 1e-12);
    Eigen::Matrix3d back = quaternion_to_rotation(q);
    CHECK((back - r).cwiseAbs().maxCoeff() < 1e-9);
  }
}
