// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/primitives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sprt/container.hpp"

namespace sprt::primitives {

GaussianSet GaussianSet::sized(int n) {
  GaussianSet g;
  g.positions = Tensor({n, 3});
  g.rotations = Tensor({n, 4});
  for (int i = 0; i < n; ++i) g.rotations.at(i, 0) = 1.0;
  g.log_scales = Tensor({n, 3});
  g.opacity_logits = Tensor({n});
  g.sh = Tensor({n, kShCoeffs, 3});
  return g;
}

GaussianSet GaussianSet::concat(const GaussianSet& a, const GaussianSet& b) {
  GaussianSet out = sized(a.count() + b.count());
  auto cat = [](Tensor& dst, const Tensor& x, const Tensor& y) {
    std::copy(x.data.begin(), x.data.end(), dst.data.begin());
    std::copy(y.data.begin(), y.data.end(), dst.data.begin() + static_cast<long>(x.data.size()));
  };
  cat(out.positions, a.positions, b.positions);
  cat(out.rotations, a.rotations, b.rotations);
  cat(out.log_scales, a.log_scales, b.log_scales);
  cat(out.opacity_logits, a.opacity_logits, b.opacity_logits);
  cat(out.sh, a.sh, b.sh);
  return out;
}

void GaussianSet::save(const std::string& path) const {
  TensorContainer c;
  c.set_tensor("positions", positions);
  c.set_tensor("rotations", rotations);
  c.set_tensor("log_scales", log_scales);
  c.set_tensor("opacity_logits", opacity_logits);
  c.set_tensor("sh", sh);
  c.save(path);
}

GaussianSet GaussianSet::load(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  GaussianSet g;
  g.positions = c.get_tensor("positions");
  g.rotations = c.get_tensor("rotations");
  g.log_scales = c.get_tensor("log_scales");
  g.opacity_logits = c.get_tensor("opacity_logits");
  g.sh = c.get_tensor("sh");
  return g;
}

Eigen::Matrix3d tangent_frame(const uvmap::UvMap& map, real u, real v, bool* degenerate) {
  require(map.channels == 3, "tangent_frame: 3-channel position map required");
  const real du = 1.0 / map.width;
  const real dv = 1.0 / map.height;
  auto sample = [&](real su, real sv) {
    auto p = uvmap::bilinear_sample(map, std::clamp(su, 0.0, 1.0), std::clamp(sv, 0.0, 1.0));
    return Eigen::Vector3d(p[0], p[1], p[2]);
  };
  Eigen::Vector3d t = (sample(u + du, v) - sample(u - du, v)) / (2.0 * du);
  Eigen::Vector3d b = (sample(u, v + dv) - sample(u, v - dv)) / (2.0 * dv);
  Eigen::Vector3d n = t.cross(b);
  if (degenerate) *degenerate = false;
  if (t.norm() < 1e-9 || n.norm() < 1e-9) {
    if (degenerate) *degenerate = true;
    return Eigen::Matrix3d::Identity();
  }
  Eigen::Vector3d t_hat = t.normalized();
  Eigen::Vector3d b_perp = b - b.dot(t_hat) * t_hat;
  if (b_perp.norm() < 1e-9) {
    if (degenerate) *degenerate = true;
    return Eigen::Matrix3d::Identity();
  }
  Eigen::Vector3d b_hat = b_perp.normalized();
  Eigen::Vector3d n_hat = t_hat.cross(b_hat);
  Eigen::Matrix3d r;
  r.col(0) = t_hat;
  r.col(1) = b_hat;
  r.col(2) = n_hat;
  return r;
}

PartParams init_part(const uvmap::UvMap& map, const uvmap::SampleGrid& grid,
                     InitDiagnostics* diag) {
  require(grid.size() > 0, "init_part: empty sample grid");
  require(map.channels == 3, "init_part: 3-channel position map required");
  const int m = grid.size();
  PartParams part;
  part.region = grid.region;
  part.grid = grid;
  part.positions = Tensor({m, 3});
  part.rotations = Tensor({m, 4});
  part.log_scales = Tensor({m, 3});
  InitDiagnostics local;

  for (int i = 0; i < m; ++i) {
    auto p = uvmap::bilinear_sample(map, grid.uv[static_cast<size_t>(i)].x(),
                                    grid.uv[static_cast<size_t>(i)].y());
    for (int a = 0; a < 3; ++a) part.positions.at(i, a) = p[static_cast<size_t>(a)];
  }

  for (int i = 0; i < m; ++i) {
    real nearest = std::numeric_limits<real>::infinity();
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      real d2 = 0;
      for (int a = 0; a < 3; ++a) {
        real d = part.positions.at(i, a) - part.positions.at(j, a);
        d2 += d * d;
      }
      nearest = std::min(nearest, d2);
    }
    real dist = m == 1 ? kMinInitDistance : std::sqrt(nearest);
    if (dist < kMinInitDistance) {
      dist = kMinInitDistance;
      ++local.clamped_distances;
    }
    const real log_dist = std::log(dist);
    for (int a = 0; a < 3; ++a) part.log_scales.at(i, a) = log_dist;
  }

  for (int i = 0; i < m; ++i) {
    bool degenerate = false;
    Eigen::Matrix3d frame = tangent_frame(map, grid.uv[static_cast<size_t>(i)].x(),
                                          grid.uv[static_cast<size_t>(i)].y(), &degenerate);
    if (degenerate) ++local.frame_fallbacks;
    Eigen::Vector4d q = rotation_to_quaternion(frame);
    for (int a = 0; a < 4; ++a) part.rotations.at(i, a) = q(a);
  }
  part.opacity_logit = kInitOpacityLogit;
  if (diag) *diag = local;
  return part;
}

Eigen::Vector4d rotation_to_quaternion(const Eigen::Matrix3d& r) {
  // Shepperd's method: pick the numerically largest pivot.
  const real trace = r(0, 0) + r(1, 1) + r(2, 2);
  Eigen::Vector4d q;
  if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
    real s = 2.0 * std::sqrt(1.0 + trace);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    real s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    real s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    real s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return q.normalized();
}

Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q) {
  const real w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Vector4d axis_angle_to_quaternion(const Eigen::Vector3d& v) {
  const real angle = v.norm();
  const real half = 0.5 * angle;
  // sin(half)/angle, series expansion near zero
  real k;
  if (angle < 1e-8) {
    k = 0.5 - angle * angle / 48.0;
  } else {
    k = std::sin(half) / angle;
  }
  return Eigen::Vector4d(std::cos(half), k * v.x(), k * v.y(), k * v.z());
}

Eigen::Vector4d quaternion_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  const real aw = a(0), ax = a(1), ay = a(2), az = a(3);
  const real bw = b(0), bx = b(1), by = b(2), bz = b(3);
  return Eigen::Vector4d(aw * bw - ax * bx - ay * by - az * bz,
                         aw * bx + ax * bw + ay * bz - az * by,
                         aw * by - ax * bz + ay * bw + az * bx,
                         aw * bz + ax * by - ay * bx + az * bw);
}

GaussianSet apply_offsets(const PartParams& part, const Offsets& offsets, const Tensor& sh) {
  const int m = part.size();
  require(offsets.dpos.dim(0) == m && offsets.drot.dim(0) == m &&
              offsets.dlog_scale.dim(0) == m && offsets.dlogit.dim(0) == m,
          "apply_offsets: offset arrays must match part size");
  require(sh.rank() == 3 && sh.dim(0) == m && sh.dim(1) == kShCoeffs && sh.dim(2) == 3,
          "apply_offsets: sh must be [m,16,3]");
  GaussianSet g = GaussianSet::sized(m);
  for (int i = 0; i < m; ++i) {
    for (int a = 0; a < 3; ++a) {
      g.positions.at(i, a) = part.positions.at(i, a) + offsets.dpos.at(i, a);
      g.log_scales.at(i, a) = part.log_scales.at(i, a) + offsets.dlog_scale.at(i, a);
    }
    g.opacity_logits[i] = part.opacity_logit + offsets.dlogit[i];
    Eigen::Vector4d base(part.rotations.at(i, 0), part.rotations.at(i, 1),
                         part.rotations.at(i, 2), part.rotations.at(i, 3));
    Eigen::Vector4d dq = axis_angle_to_quaternion(
        Eigen::Vector3d(offsets.drot.at(i, 0), offsets.drot.at(i, 1), offsets.drot.at(i, 2)));
    Eigen::Vector4d q = quaternion_multiply(dq, base).normalized();
    for (int a = 0; a < 4; ++a) g.rotations.at(i, a) = q(a);
  }
  g.sh = sh;
  return g;
}

namespace {
constexpr real kC0 = 0.28209479177387814;
constexpr real kC1 = 0.4886025119029199;
constexpr real kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                         -1.0925484305920792, 0.5462742152960396};
constexpr real kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                         -0.5900435899266435};
}  // namespace

void sh_basis(const Eigen::Vector3d& dir, real out[kShCoeffs]) {
  const real x = dir.x(), y = dir.y(), z = dir.z();
  const real xx = x * x, yy = y * y, zz = z * z;
  out[0] = kC0;
  out[1] = -kC1 * y;
  out[2] = kC1 * z;
  out[3] = -kC1 * x;
  out[4] = kC2[0] * x * y;
  out[5] = kC2[1] * y * z;
  out[6] = kC2[2] * (2 * zz - xx - yy);
  out[7] = kC2[3] * x * z;
  out[8] = kC2[4] * (xx - yy);
  out[9] = kC3[0] * y * (3 * xx - yy);
  out[10] = kC3[1] * x * y * z;
  out[11] = kC3[2] * y * (4 * zz - xx - yy);
  out[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  out[13] = kC3[4] * x * (4 * zz - xx - yy);
  out[14] = kC3[5] * z * (xx - yy);
  out[15] = kC3[6] * x * (xx - 3 * yy);
}

void sh_basis_grad(const Eigen::Vector3d& dir, real out[kShCoeffs][3]) {
  const real x = dir.x(), y = dir.y(), z = dir.z();
  const real xx = x * x, yy = y * y, zz = z * z;
  auto set = [&](int i, real gx, real gy, real gz) {
    out[i][0] = gx;
    out[i][1] = gy;
    out[i][2] = gz;
  };
  set(0, 0, 0, 0);
  set(1, 0, -kC1, 0);
  set(2, 0, 0, kC1);
  set(3, -kC1, 0, 0);
  set(4, kC2[0] * y, kC2[0] * x, 0);
  set(5, 0, kC2[1] * z, kC2[1] * y);
  set(6, -2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
  set(7, kC2[3] * z, 0, kC2[3] * x);
  set(8, 2 * kC2[4] * x, -2 * kC2[4] * y, 0);
  set(9, kC3[0] * 6 * x * y, kC3[0] * (3 * xx - 3 * yy), 0);
  set(10, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
  set(11, -2 * kC3[2] * x * y, kC3[2] * (4 * zz - xx - 3 * yy), 8 * kC3[2] * y * z);
  set(12, -6 * kC3[3] * x * z, -6 * kC3[3] * y * z, kC3[3] * (6 * zz - 3 * xx - 3 * yy));
  set(13, kC3[4] * (4 * zz - 3 * xx - yy), -2 * kC3[4] * x * y, 8 * kC3[4] * x * z);
  set(14, 2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (xx - yy));
  set(15, kC3[6] * (3 * xx - 3 * yy), -6 * kC3[6] * x * y, 0);
}

Eigen::Vector3d eval_sh(const Tensor& h, const Eigen::Vector3d& dir) {
  require(h.rank() == 2 && h.dim(0) == kShCoeffs && h.dim(1) == 3, "eval_sh: h must be [16,3]");
  require(std::abs(dir.norm() - 1.0) <= 1e-4, "eval_sh: dir must be unit length");
  real basis[kShCoeffs];
  sh_basis(dir, basis);
  Eigen::Vector3d c(0.5, 0.5, 0.5);
  for (int i = 0; i < kShCoeffs; ++i)
    for (int ch = 0; ch < 3; ++ch) c(ch) += h.at(i, ch) * basis[i];
  return c;
}

GaussianSet to_world(const GaussianSet& g, const geometry::RigidTransform& global) {
  GaussianSet out = g;
  Eigen::Vector4d gq = rotation_to_quaternion(global.rotation);
  for (int i = 0; i < g.count(); ++i) {
    Eigen::Vector3d p(g.positions.at(i, 0), g.positions.at(i, 1), g.positions.at(i, 2));
    Eigen::Vector3d w = global.apply(p);
    for (int a = 0; a < 3; ++a) out.positions.at(i, a) = w(a);
    Eigen::Vector4d q(g.rotations.at(i, 0), g.rotations.at(i, 1), g.rotations.at(i, 2),
                      g.rotations.at(i, 3));
    Eigen::Vector4d rq = quaternion_multiply(gq, q).normalized();
    for (int a = 0; a < 4; ++a) out.rotations.at(i, a) = rq(a);
  }
  return out;
}

GaussianSet to_world_lbs(const GaussianSet& g, const geometry::Pose& pose,
                         const geometry::MorphableModel& model,
                         const Tensor& reference_positions) {
  require(reference_positions.rank() == 2 && reference_positions.dim(1) == 3 &&
              reference_positions.dim(0) == model.num_vertices(),
          "to_world_lbs: reference positions must be [V,3]");
  const int num_joints = model.num_joints();
  require(static_cast<int>(pose.joint.size()) == num_joints,
          "to_world_lbs: pose joint count mismatch");
  std::vector<geometry::RigidTransform> skinning(static_cast<size_t>(num_joints));
  for (int j = 0; j < num_joints; ++j) {
    const auto& rest = model.joints[static_cast<size_t>(j)];
    skinning[static_cast<size_t>(j)] =
        rest.compose(pose.joint[static_cast<size_t>(j)]).compose(rest.inverse());
  }

  GaussianSet out = g;
  for (int i = 0; i < g.count(); ++i) {
    Eigen::Vector3d p(g.positions.at(i, 0), g.positions.at(i, 1), g.positions.at(i, 2));
    // Nearest vertex donates its skinning weights.
    int best = 0;
    real best_d2 = std::numeric_limits<real>::infinity();
    for (int v = 0; v < model.num_vertices(); ++v) {
      real d2 = 0;
      for (int a = 0; a < 3; ++a) {
        real d = reference_positions.at(v, a) - p(a);
        d2 += d * d;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = v;
      }
    }
    Eigen::Matrix3d blend_r = Eigen::Matrix3d::Zero();
    Eigen::Vector3d blend_t = Eigen::Vector3d::Zero();
    for (int j = 0; j < num_joints; ++j) {
      real w = model.skin_weights.at(best, j);
      blend_r += w * skinning[static_cast<size_t>(j)].rotation;
      blend_t += w * skinning[static_cast<size_t>(j)].translation;
    }
    Eigen::Vector3d moved = pose.global.apply(blend_r * p + blend_t);
    for (int a = 0; a < 3; ++a) out.positions.at(i, a) = moved(a);
    // Rotation part: compose with the global rotation and the (orthonormalized)
    // blended rotation via its quaternion.
    Eigen::Matrix3d total = pose.global.rotation * blend_r;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(total, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d ortho = svd.matrixU() * svd.matrixV().transpose();
    Eigen::Vector4d rot_q = rotation_to_quaternion(ortho);
    Eigen::Vector4d q(g.rotations.at(i, 0), g.rotations.at(i, 1), g.rotations.at(i, 2),
                      g.rotations.at(i, 3));
    Eigen::Vector4d composed = quaternion_multiply(rot_q, q).normalized();
    for (int a = 0; a < 4; ++a) out.rotations.at(i, a) = composed(a);
  }
  return out;
}

}  // namespace sprt::primitives
