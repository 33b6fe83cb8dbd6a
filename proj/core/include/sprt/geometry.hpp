// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "sprt/tensor.hpp"

namespace sprt::geometry {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const {
    RigidTransform r;
    r.rotation = rotation.transpose();
    r.translation = -r.rotation * translation;
    return r;
  }
  RigidTransform compose(const RigidTransform& inner) const {  // this ∘ inner
    RigidTransform r;
    r.rotation = rotation * inner.rotation;
    r.translation = rotation * inner.translation + translation;
    return r;
  }
  bool is_rotation(real tol = 1e-6) const;
};

/// Linear mesh model: positions = mean + delta * basis_id + gamma * basis_expr,
/// plus blend-skinning joints and a per-corner UV atlas.
struct MorphableModel {
  Tensor mean_shape;   // [V,3]
  Tensor basis_id;     // [V,3,D_id]
  Tensor basis_expr;   // [V,3,D_expr]
  Tensor skin_weights; // [V,J], convex rows
  std::vector<RigidTransform> joints;               // rest transforms
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Eigen::Vector2d, 3>> face_uvs;  // per-corner, in [0,1]^2
  // Named UV atlas rectangles (u0,v0,u1,v1); used to build per-part sample grids.
  std::map<std::string, Eigen::Vector4d> uv_regions;

  int num_vertices() const { return static_cast<int>(mean_shape.dim(0)); }
  int id_dims() const { return static_cast<int>(basis_id.dim(2)); }
  int expr_dims() const { return static_cast<int>(basis_expr.dim(2)); }
  int num_joints() const { return static_cast<int>(joints.size()); }

  /// Checks the documented invariants; throws std::invalid_argument.
  void validate() const;

  void save(const std::string& path) const;
  static MorphableModel load(const std::string& path);
};

/// Local joint rotations/translations (applied about each joint's rest frame)
/// plus a trailing global rigid transform.
struct Pose {
  std::vector<RigidTransform> joint;
  RigidTransform global;

  static Pose rest(int num_joints) {
    Pose p;
    p.joint.assign(static_cast<size_t>(num_joints), RigidTransform::identity());
    return p;
  }
};

struct Coefficients {
  std::vector<real> delta;
  std::vector<real> gamma;
  Pose pose;
};

/// mean + delta*B_id + gamma*B_expr. Pure blendshape evaluation, no pose.
Tensor morph(const MorphableModel& model, const Coefficients& coeffs);

/// Identity component only: mean + delta*B_id.
Tensor morph_identity(const MorphableModel& model, const std::vector<real>& delta);

/// Expression offsets only: gamma*B_expr (not anchored at the mean).
Tensor expression_offsets(const MorphableModel& model, const std::vector<real>& gamma);

/// Standard linear blend skinning followed by the global rigid transform.
/// Joint j moves points by joints[j] ∘ pose.joint[j] ∘ joints[j]^-1.
Tensor apply_lbs(const Tensor& positions, const MorphableModel& model, const Pose& pose);

real expression_distance(const std::vector<real>& a, const std::vector<real>& b);

/// 12-element row encoding (9 rotation entries row-major + 3 translation).
Tensor rigid_to_tensor(const RigidTransform& t);
RigidTransform rigid_from_tensor(const Tensor& t);

/// Greedy farthest point sampling. The first selected index is seed_index;
/// each next pick maximizes the min distance to the selected set, ties going
/// to the lowest index. Prefix property: the first m picks do not depend on k.
std::vector<int> farthest_point_sample(const std::vector<std::vector<real>>& points, int k,
                                       int seed_index);

}  // namespace sprt::geometry
