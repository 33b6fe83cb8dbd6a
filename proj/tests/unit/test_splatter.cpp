// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sprt/rng.hpp"
#include "sprt/splatter.hpp"

using namespace sprt;
using namespace sprt::splatter;

namespace {

Camera test_camera(int size = 32) {
  Camera cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = size;  // ~53 degree fov
  cam.cx = cam.cy = size / 2.0;
  cam.near_clip = 0.1;
  cam.far_clip = 50.0;
  return cam;
}

primitives::GaussianSet random_scene(Rng& rng, int n, real spread = 0.6) {
  primitives::GaussianSet g = primitives::GaussianSet::sized(n);
  for (int i = 0; i < n; ++i) {
    g.positions.at(i, 0) = spread * rng.normal();
    g.positions.at(i, 1) = spread * rng.normal();
    g.positions.at(i, 2) = 4.0 + spread * rng.normal();
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    for (int a = 0; a < 4; ++a) g.rotations.at(i, a) = q(a);
    for (int a = 0; a < 3; ++a) g.log_scales.at(i, a) = std::log(0.2) + 0.4 * rng.normal();
    g.opacity_logits[i] = rng.uniform(-1.0, 2.0);
    for (int k = 0; k < 16; ++k)
      for (int c = 0; c < 3; ++c)
        g.sh.at(i, k, c) = (k == 0 ? 0.5 : 0.05) * rng.normal();
  }
  return g;
}

}  // namespace

TEST_CASE("camera validation") {
  Camera cam = test_camera();
  CHECK_NOTHROW(cam.validate());
  Camera bad = cam;
  bad.fx = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cam;
  bad.near_clip = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cam;
  bad.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("build_cov3d: identity rotation gives diag of squared scales") {
  Eigen::Matrix3d cov = build_cov3d(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(2, 3, 4));
  Eigen::Matrix3d want = Eigen::Vector3d(4, 9, 16).asDiagonal();
  CHECK((cov - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_cov3d: 90-degree z rotation permutes the first two axes") {
  const Eigen::Vector4d q(std::cos(M_PI / 4), 0, 0, std::sin(M_PI / 4));
  Eigen::Matrix3d cov = build_cov3d(q, Eigen::Vector3d(2, 3, 4));
  Eigen::Matrix3d want = Eigen::Vector3d(9, 4, 16).asDiagonal();
  CHECK((cov - want).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("build_cov3d eigenvalues equal sorted squared scales") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    Eigen::Vector3d s(std::exp(rng.normal() * 0.5), std::exp(rng.normal() * 0.5),
                      std::exp(rng.normal() * 0.5));
    Eigen::Matrix3d cov = build_cov3d(q, s);
    Eigen::Vector3d ev = testing::sym3_eigenvalues(cov);
    Eigen::Vector3d want(s(0) * s(0), s(1) * s(1), s(2) * s(2));
    std::sort(want.data(), want.data() + 3);
    for (int a = 0; a < 3; ++a) CHECK(testing::rel_err(ev(a), want(a)) < 1e-6);
  }
}

TEST_CASE("project: isotropic gaussian on the optical axis has a closed form") {
  Camera cam = test_camera(64);
  const real s = 0.3, z = 4.0;
  Tensor sh({16, 3});
  auto splat = project(Eigen::Vector3d(0, 0, z), Eigen::Vector4d(1, 0, 0, 0),
                       Eigen::Vector3d(s, s, s), 0.9, sh, cam);
  REQUIRE(splat.has_value());
  const real want = cam.fx * s / z;
  const real floor = render_settings().covariance_floor;
  CHECK(splat->mean2d.x() == doctest::Approx(cam.cx));
  CHECK(splat->mean2d.y() == doctest::Approx(cam.cy));
  CHECK(splat->cov2d(0, 0) == doctest::Approx(want * want + floor).epsilon(1e-9));
  CHECK(splat->cov2d(1, 1) == doctest::Approx(want * want + floor).epsilon(1e-9));
  CHECK(std::abs(splat->cov2d(0, 1)) < 1e-9);
  CHECK(splat->depth == doctest::Approx(z));
  CHECK(splat->color(0) == doctest::Approx(0.5));
}

TEST_CASE("project: doubling the depth halves the projected deviation") {
  Camera cam = test_camera(64);
  const real s = 0.3;
  Tensor sh({16, 3});
  auto near_splat = project(Eigen::Vector3d(0, 0, 3.0), Eigen::Vector4d(1, 0, 0, 0),
                            Eigen::Vector3d(s, s, s), 0.9, sh, cam);
  auto far_splat = project(Eigen::Vector3d(0, 0, 6.0), Eigen::Vector4d(1, 0, 0, 0),
                           Eigen::Vector3d(s, s, s), 0.9, sh, cam);
  REQUIRE(near_splat.has_value());
  REQUIRE(far_splat.has_value());
  const real floor = render_settings().covariance_floor;
  const real sd_near = std::sqrt(near_splat->cov2d(0, 0) - floor);
  const real sd_far = std::sqrt(far_splat->cov2d(0, 0) - floor);
  CHECK(sd_far == doctest::Approx(sd_near / 2.0).epsilon(1e-9));
}

TEST_CASE("project culls by depth and guard band") {
  Camera cam = test_camera(32);
  Tensor sh({16, 3});
  const Eigen::Vector4d q(1, 0, 0, 0);
  const Eigen::Vector3d s(0.1, 0.1, 0.1);
  CHECK_FALSE(project(Eigen::Vector3d(0, 0, -1), q, s, 0.9, sh, cam).has_value());
  CHECK_FALSE(project(Eigen::Vector3d(0, 0, 100), q, s, 0.9, sh, cam).has_value());
  CHECK_FALSE(project(Eigen::Vector3d(50, 0, 4), q, s, 0.9, sh, cam).has_value());
  CHECK(project(Eigen::Vector3d(0, 0, 4), q, s, 0.9, sh, cam).has_value());
}

TEST_CASE("project covariance matches numeric Jacobian propagation") {
  Rng rng(42);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Camera cam = test_camera(48);
    // Random small camera rotation, looking roughly down +z.
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    cam.rotation = Eigen::AngleAxisd(0.3 * rng.normal(), axis.normalized()).toRotationMatrix();
    cam.translation = Eigen::Vector3d(0.2 * rng.normal(), 0.2 * rng.normal(), 0.3 * rng.normal());

    Eigen::Vector3d pos(0.6 * rng.normal(), 0.6 * rng.normal(), 4.0 + rng.normal());
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    Eigen::Vector3d s(std::exp(0.3 * rng.normal()) * 0.2, std::exp(0.3 * rng.normal()) * 0.2,
                      std::exp(0.3 * rng.normal()) * 0.2);
    Tensor sh({16, 3});
    auto splat = project(pos, q, s, 0.9, sh, cam);
    if (!splat) continue;
    ++checked;

    // Numeric Jacobian of the full world->pixel map at the mean.
    auto pixel_of = [&](const Eigen::Vector3d& p) {
      const Eigen::Vector3d t = cam.to_view(p);
      return Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
    };
    Eigen::Matrix<real, 2, 3> jac;
    const real h = 1e-5;
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector3d dp = Eigen::Vector3d::Zero();
      dp(a) = h;
      jac.col(a) = (pixel_of(pos + dp) - pixel_of(pos - dp)) / (2 * h);
    }
    const Eigen::Matrix3d cov3d = build_cov3d(q, s);
    const Eigen::Matrix2d want = jac * cov3d * jac.transpose() +
                                 render_settings().covariance_floor * Eigen::Matrix2d::Identity();
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        CHECK(testing::rel_err(splat->cov2d(r, c), want(r, c), 1e-6) < 1e-3);
  }
  CHECK(checked > 60);  // most random draws must actually land on screen
}

TEST_CASE("rasterize: empty set gives the constant background") {
  Camera cam = test_camera(16);
  RenderResult r = rasterize(primitives::GaussianSet::empty(), cam, {0.2, 0.4, 0.6});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      CHECK(r.image.at(0, y, x) == doctest::Approx(0.2));
      CHECK(r.image.at(1, y, x) == doctest::Approx(0.4));
      CHECK(r.image.at(2, y, x) == doctest::Approx(0.6));
      CHECK(r.alpha.at(y, x) == 0.0);
    }
}

TEST_CASE("rasterize: one huge opaque splat saturates the center pixel") {
  Camera cam = test_camera(32);
  primitives::GaussianSet g = primitives::GaussianSet::sized(1);
  g.positions.at(0, 2) = 4.0;
  for (int a = 0; a < 3; ++a) g.log_scales.at(0, a) = std::log(20.0);  // enormous
  g.opacity_logits[0] = 20.0;  // activates to ~1, alpha capped at 0.99
  g.sh.at(0, 0, 0) = (0.9 - 0.5) / 0.28209479177387814;  // DC red 0.9
  const Eigen::Vector3d bg(0.0, 0.0, 1.0);
  RenderResult r = rasterize(g, cam, bg);
  const real cap = render_settings().alpha_cap;
  CHECK(std::abs(r.image.at(0, 16, 16) - cap * 0.9) < 1e-3);
  CHECK(std::abs(r.image.at(2, 16, 16) - (cap * 0.5 + (1 - cap) * 1.0)) < 1e-3);
  CHECK(r.alpha.at(16, 16) == doctest::Approx(cap).epsilon(1e-6));
}

TEST_CASE("tiled rendering equals the untiled reference compositor") {
  Rng rng(43);
  for (int scene = 0; scene < 5; ++scene) {
    Camera cam = test_camera(40);  // not a multiple of the tile size
    primitives::GaussianSet g = random_scene(rng, 24);
    RenderResult r = rasterize(g, cam, {1, 1, 1});
    Tensor want = testing::reference_rasterize(g, cam, {1, 1, 1});
    real max_diff = 0;
    for (int64_t i = 0; i < want.numel(); ++i)
      max_diff = std::max(max_diff, std::abs(r.image[i] - want[i]));
    CHECK(max_diff < 1e-5);
  }
}

TEST_CASE("rasterize: permutation of the input leaves the image unchanged") {
  Rng rng(44);
  Camera cam = test_camera(32);
  primitives::GaussianSet g = random_scene(rng, 12);
  RenderResult a = rasterize(g, cam, {1, 1, 1});
  // Reverse the primitive order.
  primitives::GaussianSet rev = primitives::GaussianSet::sized(12);
  for (int i = 0; i < 12; ++i) {
    const int j = 11 - i;
    for (int c = 0; c < 3; ++c) rev.positions.at(i, c) = g.positions.at(j, c);
    for (int c = 0; c < 4; ++c) rev.rotations.at(i, c) = g.rotations.at(j, c);
    for (int c = 0; c < 3; ++c) rev.log_scales.at(i, c) = g.log_scales.at(j, c);
    rev.opacity_logits[i] = g.opacity_logits[j];
    for (int k = 0; k < 16; ++k)
      for (int c = 0; c < 3; ++c) rev.sh.at(i, k, c) = g.sh.at(j, k, c);
  }
  RenderResult b = rasterize(rev, cam, {1, 1, 1});
  for (int64_t i = 0; i < a.image.numel(); ++i)
    CHECK(std::abs(a.image[i] - b.image[i]) < 1e-5);
}

TEST_CASE("rasterize: accumulated alpha and terminal transmittance are consistent") {
  Rng rng(45);
  Camera cam = test_camera(32);
  primitives::GaussianSet g = random_scene(rng, 20);
  RenderResult r = rasterize(g, cam, {0, 0, 0});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const real alpha = r.alpha.at(y, x);
      CHECK(alpha >= 0.0);
      CHECK(alpha <= 1.0);
      CHECK(std::abs(r.transmittance.at(y, x) - (1.0 - alpha)) < 1e-6);
    }
}

TEST_CASE("rasterize_backward: zero upstream gives zero gradients") {
  Rng rng(46);
  Camera cam = test_camera(24);
  primitives::GaussianSet g = random_scene(rng, 6);
  RenderResult fwd = rasterize(g, cam, {1, 1, 1});
  Gradients grads = rasterize_backward(fwd, g, Tensor({3, 24, 24}));
  for (real x : grads.positions.data) CHECK(x == 0.0);
  for (real x : grads.sh.data) CHECK(x == 0.0);
}

TEST_CASE("rasterize_backward: single-splat opacity gradient matches finite differences") {
  Rng rng(47);
  Camera cam = test_camera(24);
  primitives::GaussianSet g = primitives::GaussianSet::sized(1);
  g.positions.at(0, 2) = 4.0;
  for (int a = 0; a < 3; ++a) g.log_scales.at(0, a) = std::log(0.4);
  g.opacity_logits[0] = 0.3;
  g.sh.at(0, 0, 0) = 0.7;
  g.sh.at(0, 0, 1) = -0.2;

  // Mean-pixel objective.
  Tensor upstream({3, 24, 24});
  upstream.fill(1.0 / (3.0 * 24 * 24));
  RenderResult fwd = rasterize(g, cam, {1, 1, 1});
  Gradients grads = rasterize_backward(fwd, g, upstream);

  auto mean_pixel = [&](real logit) {
    primitives::GaussianSet g2 = g;
    g2.opacity_logits[0] = logit;
    RenderResult r = rasterize(g2, cam, {1, 1, 1});
    real acc = 0;
    for (real x : r.image.data) acc += x;
    return acc / (3.0 * 24 * 24);
  };
  const real fd = testing::central_difference(mean_pixel, g.opacity_logits[0], 1e-3);
  CHECK(testing::rel_err(grads.opacity_logits[0], fd) < 1e-3);
}

TEST_CASE("rasterize_backward full finite-difference sweep on a small scene") {
  Rng rng(48);
  Camera cam = test_camera(16);
  primitives::GaussianSet g = random_scene(rng, 4, 0.4);

  Tensor upstream({3, 16, 16});
  for (auto& x : upstream.data) x = rng.normal() / 256.0;
  RenderResult fwd = rasterize(g, cam, {1, 1, 1});
  Gradients grads = rasterize_backward(fwd, g, upstream);

  auto objective = [&](const primitives::GaussianSet& gs) {
    RenderResult r = rasterize(gs, cam, {1, 1, 1});
    real acc = 0;
    for (int64_t i = 0; i < r.image.numel(); ++i) acc += r.image[i] * upstream[i];
    return acc;
  };
  auto check_param = [&](Tensor primitives::GaussianSet::*field, const Tensor& analytic) {
    for (int64_t i = 0; i < analytic.numel(); ++i) {
      auto f = [&](real v) {
        primitives::GaussianSet g2 = g;
        (g2.*field)[i] = v;
        return objective(g2);
      };
      const real fd = testing::central_difference(f, (g.*field)[i], 1e-4);
      const real an = analytic[i];
      if (std::abs(an) > 1e-6)
        CHECK(std::abs(an - fd) / std::max(std::abs(fd), 1e-9) < 2e-3);
    }
  };
  check_param(&primitives::GaussianSet::positions, grads.positions);
  check_param(&primitives::GaussianSet::rotations, grads.rotations);
  check_param(&primitives::GaussianSet::log_scales, grads.log_scales);
  check_param(&primitives::GaussianSet::opacity_logits, grads.opacity_logits);
  check_param(&primitives::GaussianSet::sh, grads.sh);
}
