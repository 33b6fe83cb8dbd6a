// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/geometry.hpp"

#include <cmath>
#include <limits>

#include "sprt/container.hpp"

namespace sprt::geometry {

bool RigidTransform::is_rotation(real tol) const {
  Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

void MorphableModel::validate() const {
  const int v = num_vertices();
  require(mean_shape.rank() == 2 && mean_shape.dim(1) == 3, "model: mean_shape must be [V,3]");
  require(basis_id.rank() == 3 && basis_id.dim(0) == v && basis_id.dim(1) == 3,
          "model: basis_id must be [V,3,D_id]");
  require(basis_expr.rank() == 3 && basis_expr.dim(0) == v && basis_expr.dim(1) == 3,
          "model: basis_expr must be [V,3,D_expr]");
  require(skin_weights.rank() == 2 && skin_weights.dim(0) == v &&
              skin_weights.dim(1) == num_joints(),
          "model: skin_weights must be [V,J]");
  for (int i = 0; i < v; ++i) {
    real row = 0;
    for (int j = 0; j < num_joints(); ++j) {
      real w = skin_weights.at(i, j);
      require(w >= 0.0, "model: negative skinning weight");
      row += w;
    }
    require(std::abs(row - 1.0) <= 1e-6, "model: skinning weights must sum to 1");
  }
  for (const auto& f : faces)
    for (int c : f) require(c >= 0 && c < v, "model: face index out of range");
  require(face_uvs.size() == faces.size(), "model: per-corner uvs must match faces");
  for (const auto& fu : face_uvs)
    for (const auto& uv : fu)
      require(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0,
              "model: uv outside [0,1]^2");
  for (const auto& j : joints) require(j.is_rotation(), "model: joint rest rotation invalid");
}

Tensor morph(const MorphableModel& model, const Coefficients& coeffs) {
  require(static_cast<int>(coeffs.delta.size()) == model.id_dims(),
          "morph: delta length != D_id");
  require(static_cast<int>(coeffs.gamma.size()) == model.expr_dims(),
          "morph: gamma length != D_expr");
  const int v = model.num_vertices();
  Tensor out = model.mean_shape;
  for (int i = 0; i < v; ++i)
    for (int a = 0; a < 3; ++a) {
      real acc = 0;
      for (int d = 0; d < model.id_dims(); ++d)
        acc += coeffs.delta[static_cast<size_t>(d)] * model.basis_id.at(i, a, d);
      for (int d = 0; d < model.expr_dims(); ++d)
        acc += coeffs.gamma[static_cast<size_t>(d)] * model.basis_expr.at(i, a, d);
      out.at(i, a) += acc;
    }
  return out;
}

Tensor morph_identity(const MorphableModel& model, const std::vector<real>& delta) {
  Coefficients c;
  c.delta = delta;
  c.gamma.assign(static_cast<size_t>(model.expr_dims()), 0.0);
  return morph(model, c);
}

Tensor expression_offsets(const MorphableModel& model, const std::vector<real>& gamma) {
  require(static_cast<int>(gamma.size()) == model.expr_dims(),
          "expression_offsets: gamma length != D_expr");
  const int v = model.num_vertices();
  Tensor out({v, 3});
  for (int i = 0; i < v; ++i)
    for (int a = 0; a < 3; ++a) {
      real acc = 0;
      for (int d = 0; d < model.expr_dims(); ++d)
        acc += gamma[static_cast<size_t>(d)] * model.basis_expr.at(i, a, d);
      out.at(i, a) = acc;
    }
  return out;
}

Tensor apply_lbs(const Tensor& positions, const MorphableModel& model, const Pose& pose) {
  require(static_cast<int>(pose.joint.size()) == model.num_joints(),
          "apply_lbs: pose joint count mismatch");
  require(positions.rank() == 2 && positions.dim(1) == 3 &&
              positions.dim(0) == model.num_vertices(),
          "apply_lbs: positions must be [V,3]");
  for (const auto& j : pose.joint)
    require(j.is_rotation(), "apply_lbs: joint rotation not orthonormal");
  require(pose.global.is_rotation(), "apply_lbs: global rotation not orthonormal");

  const int num_joints = model.num_joints();
  std::vector<RigidTransform> skinning(static_cast<size_t>(num_joints));
  for (int j = 0; j < num_joints; ++j) {
    const RigidTransform& rest = model.joints[static_cast<size_t>(j)];
    skinning[static_cast<size_t>(j)] =
        rest.compose(pose.joint[static_cast<size_t>(j)]).compose(rest.inverse());
  }

  const int v = model.num_vertices();
  Tensor out({v, 3});
  for (int i = 0; i < v; ++i) {
    Eigen::Vector3d p(positions.at(i, 0), positions.at(i, 1), positions.at(i, 2));
    Eigen::Vector3d blended = Eigen::Vector3d::Zero();
    for (int j = 0; j < num_joints; ++j) {
      real w = model.skin_weights.at(i, j);
      if (w != 0.0) blended += w * skinning[static_cast<size_t>(j)].apply(p);
    }
    Eigen::Vector3d world = pose.global.apply(blended);
    out.at(i, 0) = world.x();
    out.at(i, 1) = world.y();
    out.at(i, 2) = world.z();
  }
  return out;
}

real expression_distance(const std::vector<real>& a, const std::vector<real>& b) {
  require(a.size() == b.size(), "expression_distance: length mismatch");
  real acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    real d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

std::vector<int> farthest_point_sample(const std::vector<std::vector<real>>& points, int k,
                                       int seed_index) {
  const int n = static_cast<int>(points.size());
  require(n > 0, "fps: empty point set");
  if (k == 0) return {};
  require(k <= n, "fps: k exceeds point count");
  require(seed_index >= 0 && seed_index < n, "fps: seed index out of range");

  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(k));
  picked.push_back(seed_index);

  std::vector<real> min_dist(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    min_dist[static_cast<size_t>(i)] =
        expression_distance(points[static_cast<size_t>(i)], points[static_cast<size_t>(seed_index)]);

  while (static_cast<int>(picked.size()) < k) {
    int best = 0;
    real best_d = -1;
    for (int i = 0; i < n; ++i) {
      // Strict > keeps the lowest index on ties.
      if (min_dist[static_cast<size_t>(i)] > best_d) {
        best_d = min_dist[static_cast<size_t>(i)];
        best = i;
      }
    }
    picked.push_back(best);
    for (int i = 0; i < n; ++i) {
      real d = expression_distance(points[static_cast<size_t>(i)], points[static_cast<size_t>(best)]);
      if (d < min_dist[static_cast<size_t>(i)]) min_dist[static_cast<size_t>(i)] = d;
    }
  }
  return picked;
}

Tensor rigid_to_tensor(const RigidTransform& t) {
  Tensor out({12});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r * 3 + c] = t.rotation(r, c);
  for (int a = 0; a < 3; ++a) out[9 + a] = t.translation(a);
  return out;
}

RigidTransform rigid_from_tensor(const Tensor& t) {
  require(t.numel() == 12, "rigid_from_tensor: expected 12 values");
  RigidTransform out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation(r, c) = t[r * 3 + c];
  for (int a = 0; a < 3; ++a) out.translation(a) = t[9 + a];
  return out;
}

namespace {

Tensor transforms_to_tensor(const std::vector<RigidTransform>& ts) {
  Tensor out({static_cast<int64_t>(ts.size()), 12});
  for (size_t i = 0; i < ts.size(); ++i) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.at(static_cast<int64_t>(i), r * 3 + c) = ts[i].rotation(r, c);
    for (int a = 0; a < 3; ++a) out.at(static_cast<int64_t>(i), 9 + a) = ts[i].translation(a);
  }
  return out;
}

std::vector<RigidTransform> transforms_from_tensor(const Tensor& t) {
  std::vector<RigidTransform> out(static_cast<size_t>(t.dim(0)));
  for (int64_t i = 0; i < t.dim(0); ++i) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[static_cast<size_t>(i)].rotation(r, c) = t.at(i, r * 3 + c);
    for (int a = 0; a < 3; ++a) out[static_cast<size_t>(i)].translation(a) = t.at(i, 9 + a);
  }
  return out;
}

}  // namespace

void MorphableModel::save(const std::string& path) const {
  TensorContainer c;
  c.set_tensor("mean_shape", mean_shape);
  c.set_tensor("basis_id", basis_id);
  c.set_tensor("basis_expr", basis_expr);
  c.set_tensor("skin_weights", skin_weights);
  c.set_tensor("joints", transforms_to_tensor(joints));
  std::vector<int64_t> face_idx;
  face_idx.reserve(faces.size() * 3);
  for (const auto& f : faces) face_idx.insert(face_idx.end(), {f[0], f[1], f[2]});
  c.set_i64("faces", face_idx);
  Tensor uvs({static_cast<int64_t>(face_uvs.size()), 3, 2});
  for (size_t i = 0; i < face_uvs.size(); ++i)
    for (int corner = 0; corner < 3; ++corner) {
      uvs.at(static_cast<int64_t>(i), corner, 0) = face_uvs[i][static_cast<size_t>(corner)].x();
      uvs.at(static_cast<int64_t>(i), corner, 1) = face_uvs[i][static_cast<size_t>(corner)].y();
    }
  c.set_tensor("uv_coords", uvs);
  for (const auto& [name, rect] : uv_regions) {
    Tensor r({4});
    for (int a = 0; a < 4; ++a) r[a] = rect(a);
    c.set_tensor("region_" + name, r);
  }
  c.save(path);
}

MorphableModel MorphableModel::load(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  MorphableModel m;
  m.mean_shape = c.get_tensor("mean_shape");
  m.basis_id = c.get_tensor("basis_id");
  m.basis_expr = c.get_tensor("basis_expr");
  m.skin_weights = c.get_tensor("skin_weights");
  m.joints = transforms_from_tensor(c.get_tensor("joints"));
  auto face_idx = c.get_i64("faces");
  if (face_idx.size() % 3 != 0) throw data_error("model: face index list not a multiple of 3");
  for (size_t i = 0; i + 2 < face_idx.size(); i += 3)
    m.faces.push_back({static_cast<int>(face_idx[i]), static_cast<int>(face_idx[i + 1]),
                       static_cast<int>(face_idx[i + 2])});
  Tensor uvs = c.get_tensor("uv_coords");
  m.face_uvs.resize(static_cast<size_t>(uvs.dim(0)));
  for (int64_t i = 0; i < uvs.dim(0); ++i)
    for (int corner = 0; corner < 3; ++corner)
      m.face_uvs[static_cast<size_t>(i)][static_cast<size_t>(corner)] =
          Eigen::Vector2d(uvs.at(i, corner, 0), uvs.at(i, corner, 1));
  for (const auto& name : c.names())
    if (name.rfind("region_", 0) == 0) {
      Tensor r = c.get_tensor(name);
      m.uv_regions[name.substr(7)] = Eigen::Vector4d(r[0], r[1], r[2], r[3]);
    }
  m.validate();
  return m;
}

}  // namespace sprt::geometry
