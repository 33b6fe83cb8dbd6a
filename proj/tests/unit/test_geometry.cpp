// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sprt/geometry.hpp"
#include "sprt/rng.hpp"

using namespace sprt;
using namespace sprt::geometry;

namespace {

MorphableModel tiny_model(int verts, int d_id, int d_expr, int joints, Rng& rng) {
  MorphableModel m;
  m.mean_shape = Tensor({verts, 3});
  for (auto& x : m.mean_shape.data) x = rng.normal();
  m.basis_id = Tensor({verts, 3, d_id});
  for (auto& x : m.basis_id.data) x = rng.normal();
  m.basis_expr = Tensor({verts, 3, d_expr});
  for (auto& x : m.basis_expr.data) x = rng.normal();
  m.skin_weights = Tensor({verts, joints});
  for (int i = 0; i < verts; ++i) {
    real sum = 0;
    for (int j = 0; j < joints; ++j) {
      const real w = rng.uniform() + 0.01;
      m.skin_weights.at(i, j) = w;
      sum += w;
    }
    for (int j = 0; j < joints; ++j) m.skin_weights.at(i, j) /= sum;
  }
  m.joints.assign(static_cast<size_t>(joints), RigidTransform::identity());
  for (int j = 0; j < joints; ++j)
    m.joints[static_cast<size_t>(j)].translation = Eigen::Vector3d(j, -j, 0.5 * j);
  return m;
}

RigidTransform random_rotation(Rng& rng) {
  RigidTransform t;
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  t.rotation = Eigen::AngleAxisd(rng.uniform(-2.0, 2.0), axis.normalized()).toRotationMatrix();
  t.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  return t;
}

}  // namespace

TEST_CASE("morph: zero coefficients give the mean shape exactly") {
  Rng rng(1);
  auto m = tiny_model(17, 4, 3, 2, rng);
  Coefficients c;
  c.delta.assign(4, 0.0);
  c.gamma.assign(3, 0.0);
  Tensor out = morph(m, c);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == m.mean_shape[i]);
}

TEST_CASE("morph: one-hot delta adds one identity basis column") {
  Rng rng(2);
  auto m = tiny_model(9, 4, 3, 1, rng);
  Coefficients c;
  c.delta.assign(4, 0.0);
  c.delta[2] = 1.0;
  c.gamma.assign(3, 0.0);
  Tensor out = morph(m, c);
  for (int i = 0; i < 9; ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(out.at(i, a) == doctest::Approx(m.mean_shape.at(i, a) + m.basis_id.at(i, a, 2)));
}

TEST_CASE("morph matches the dense triple-loop oracle") {
  Rng rng(3);
  auto m = tiny_model(25, 5, 4, 2, rng);
  Coefficients c;
  for (int i = 0; i < 5; ++i) c.delta.push_back(rng.normal());
  for (int i = 0; i < 4; ++i) c.gamma.push_back(rng.normal());
  Tensor got = morph(m, c);
  Tensor want = testing::naive_morph(m.mean_shape, m.basis_id, m.basis_expr, c.delta, c.gamma);
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(testing::rel_err(got[i], want[i]) < 1e-6);
}

TEST_CASE("morph is linear in coefficients") {
  Rng rng(4);
  auto m = tiny_model(11, 3, 3, 1, rng);
  auto sample_coeffs = [&] {
    Coefficients c;
    for (int i = 0; i < 3; ++i) c.delta.push_back(rng.normal());
    for (int i = 0; i < 3; ++i) c.gamma.push_back(rng.normal());
    return c;
  };
  Coefficients c1 = sample_coeffs(), c2 = sample_coeffs(), c12;
  for (int i = 0; i < 3; ++i) {
    c12.delta.push_back(c1.delta[static_cast<size_t>(i)] + c2.delta[static_cast<size_t>(i)]);
    c12.gamma.push_back(c1.gamma[static_cast<size_t>(i)] + c2.gamma[static_cast<size_t>(i)]);
  }
  Tensor s12 = morph(m, c12), s1 = morph(m, c1), s2 = morph(m, c2);
  for (int64_t i = 0; i < s12.numel(); ++i)
    CHECK(s12[i] - m.mean_shape[i] ==
          doctest::Approx(s1[i] - m.mean_shape[i] + s2[i] - m.mean_shape[i]).epsilon(1e-6));
}

TEST_CASE("morph rejects mismatched coefficient lengths") {
  Rng rng(5);
  auto m = tiny_model(5, 3, 2, 1, rng);
  Coefficients c;
  c.delta.assign(2, 0.0);  // wrong length
  c.gamma.assign(2, 0.0);
  CHECK_THROWS_AS(morph(m, c), std::invalid_argument);
}

TEST_CASE("lbs: all-identity pose is the identity map") {
  Rng rng(6);
  auto m = tiny_model(13, 3, 2, 3, rng);
  Tensor pos = m.mean_shape;
  Tensor out = apply_lbs(pos, m, Pose::rest(3));
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(pos[i]));
}

TEST_CASE("lbs: all weights on joint 0 with a pure translation") {
  Rng rng(7);
  auto m = tiny_model(8, 2, 2, 2, rng);
  for (int i = 0; i < 8; ++i) {
    m.skin_weights.at(i, 0) = 1.0;
    m.skin_weights.at(i, 1) = 0.0;
  }
  Pose p = Pose::rest(2);
  p.joint[0].translation = Eigen::Vector3d(0.5, -1.0, 2.0);
  Tensor out = apply_lbs(m.mean_shape, m, p);
  for (int i = 0; i < 8; ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(out.at(i, a) == doctest::Approx(m.mean_shape.at(i, a) + p.joint[0].translation(a)));
}

TEST_CASE("lbs: two-joint blend matches the explicit per-vertex oracle") {
  Rng rng(8);
  auto m = tiny_model(14, 2, 2, 2, rng);
  Pose p = Pose::rest(2);
  p.joint[0] = random_rotation(rng);
  p.joint[1] = random_rotation(rng);
  p.global = random_rotation(rng);
  Tensor out = apply_lbs(m.mean_shape, m, p);

  for (int i = 0; i < 14; ++i) {
    Eigen::Vector3d x(m.mean_shape.at(i, 0), m.mean_shape.at(i, 1), m.mean_shape.at(i, 2));
    Eigen::Vector3d blended = Eigen::Vector3d::Zero();
    for (int j = 0; j < 2; ++j) {
      const auto& rest = m.joints[static_cast<size_t>(j)];
      const Eigen::Vector3d local = rest.rotation.transpose() * (x - rest.translation);
      const Eigen::Vector3d moved =
          rest.rotation * (p.joint[static_cast<size_t>(j)].rotation * local +
                           p.joint[static_cast<size_t>(j)].translation) +
          rest.translation;
      blended += m.skin_weights.at(i, j) * moved;
    }
    const Eigen::Vector3d world = p.global.rotation * blended + p.global.translation;
    for (int a = 0; a < 3; ++a) CHECK(testing::rel_err(out.at(i, a), world(a)) < 1e-6);
  }
}

TEST_CASE("lbs rejects non-orthonormal rotations") {
  Rng rng(9);
  auto m = tiny_model(4, 2, 2, 1, rng);
  Pose p = Pose::rest(1);
  p.joint[0].rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(apply_lbs(m.mean_shape, m, p), std::invalid_argument);
}

TEST_CASE("expression distance") {
  CHECK(expression_distance({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(expression_distance({1, 0}, {0, 1}) == doctest::Approx(std::sqrt(2.0)));
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<real> a(6), b(6);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    real acc = 0;
    for (int i = 0; i < 6; ++i) acc += (a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]) *
                                       (a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]);
    CHECK(expression_distance(a, b) == doctest::Approx(std::sqrt(acc)));
    CHECK(expression_distance(a, b) == doctest::Approx(expression_distance(b, a)));
  }
  CHECK_THROWS_AS(expression_distance({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("fps: k=1 returns the seed; farthest pair in 1-D") {
  std::vector<std::vector<real>> pts = {{0.0}, {1.0}, {10.0}};
  CHECK(farthest_point_sample(pts, 1, 0) == std::vector<int>{0});
  CHECK(farthest_point_sample(pts, 2, 0) == std::vector<int>{0, 2});
  CHECK(farthest_point_sample(pts, 0, 0).empty());
  CHECK_THROWS_AS(farthest_point_sample(pts, 4, 0), std::invalid_argument);
}

TEST_CASE("fps matches the brute-force greedy oracle and nests prefixes") {
  Rng rng(11);
  std::vector<std::vector<real>> pts;
  for (int i = 0; i < 50; ++i) {
    std::vector<real> p(4);
    for (auto& x : p) x = rng.normal();
    pts.push_back(p);
  }
  const auto full = farthest_point_sample(pts, 10, 3);
  CHECK(full == testing::brute_force_fps(pts, 10, 3));
  for (int m = 1; m <= 10; ++m) {
    const auto prefix = farthest_point_sample(pts, m, 3);
    CHECK(std::equal(prefix.begin(), prefix.end(), full.begin()));
  }
}

TEST_CASE("fps tie-break picks the lowest index") {
  // Duplicate farthest candidates: indices 1 and 2 sit at the same point.
  std::vector<std::vector<real>> pts = {{0.0, 0.0}, {5.0, 0.0}, {5.0, 0.0}, {3.0, 0.0}};
  const auto picked = farthest_point_sample(pts, 2, 0);
  CHECK(picked == std::vector<int>{0, 1});
}

TEST_CASE("model bundle save/load round-trip") {
  Rng rng(12);
  auto m = tiny_model(10, 3, 2, 2, rng);
  m.mean_shape.quantize_storage();
  m.basis_id.quantize_storage();
  m.basis_expr.quantize_storage();
  m.skin_weights.quantize_storage();
  for (int i = 0; i < 10; ++i) {
    real s = m.skin_weights.at(i, 0) + m.skin_weights.at(i, 1);
    m.skin_weights.at(i, 0) /= s;
    m.skin_weights.at(i, 1) /= s;
  }
  m.faces.push_back({0, 1, 2});
  m.face_uvs.push_back({Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)});
  m.uv_regions["face"] = Eigen::Vector4d(0, 0, 1, 0.5);
  const std::string path = "/tmp/sprt_test_model.bin";
  m.save(path);
  MorphableModel back = MorphableModel::load(path);
  CHECK(back.num_vertices() == 10);
  CHECK(back.faces.size() == 1);
  CHECK(back.uv_regions.count("face") == 1);
  for (int64_t i = 0; i < m.mean_shape.numel(); ++i)
    CHECK(back.mean_shape[i] == m.mean_shape[i]);
  std::remove(path.c_str());
}
