// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/graph_ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "sprt/primitives.hpp"

namespace sprt::graph {

namespace {

using uvmap::BilinearFootprint;

void scatter_chw3(Tensor& grad, const BilinearFootprint& fp, const Eigen::Vector3d& g) {
  for (int c = 0; c < 3; ++c) {
    grad.at(c, fp.y0, fp.x0) += fp.w00 * g(c);
    grad.at(c, fp.y0, fp.x1) += fp.w10 * g(c);
    grad.at(c, fp.y1, fp.x0) += fp.w01 * g(c);
    grad.at(c, fp.y1, fp.x1) += fp.w11 * g(c);
  }
}

Eigen::Vector3d sample_chw3(const Tensor& map, real u, real v, BilinearFootprint& fp) {
  const int h = static_cast<int>(map.dim(1));
  const int w = static_cast<int>(map.dim(2));
  fp = uvmap::bilinear_footprint(w, h, std::clamp(u, 0.0, 1.0), std::clamp(v, 0.0, 1.0));
  Eigen::Vector3d out;
  for (int c = 0; c < 3; ++c)
    out(c) = fp.w00 * map.at(c, fp.y0, fp.x0) + fp.w10 * map.at(c, fp.y0, fp.x1) +
             fp.w01 * map.at(c, fp.y1, fp.x0) + fp.w11 * map.at(c, fp.y1, fp.x1);
  return out;
}

}  // namespace

int bilinear_gather(ad::Tape& t, int map, const std::vector<Eigen::Vector2d>& uv) {
  const Tensor& mv = t.value(map);
  require(mv.rank() == 3, "bilinear_gather: expected [C,H,W]");
  const int c = static_cast<int>(mv.dim(0));
  const int h = static_cast<int>(mv.dim(1));
  const int w = static_cast<int>(mv.dim(2));
  const int m = static_cast<int>(uv.size());
  Tensor out({m, c});
  std::vector<BilinearFootprint> fps;
  fps.reserve(uv.size());
  for (int i = 0; i < m; ++i) {
    const BilinearFootprint fp = uvmap::bilinear_footprint(w, h, uv[static_cast<size_t>(i)].x(),
                                                           uv[static_cast<size_t>(i)].y());
    fps.push_back(fp);
    for (int ch = 0; ch < c; ++ch)
      out.at(i, ch) = fp.w00 * mv.at(ch, fp.y0, fp.x0) + fp.w10 * mv.at(ch, fp.y0, fp.x1) +
                      fp.w01 * mv.at(ch, fp.y1, fp.x0) + fp.w11 * mv.at(ch, fp.y1, fp.x1);
  }
  if (!t.requires_grad(map)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, map, fps, m, c](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor& gm = tp.grad(map);
    for (int i = 0; i < m; ++i) {
      const BilinearFootprint& fp = fps[static_cast<size_t>(i)];
      for (int ch = 0; ch < c; ++ch) {
        const real gv = g.at(i, ch);
        gm.at(ch, fp.y0, fp.x0) += fp.w00 * gv;
        gm.at(ch, fp.y0, fp.x1) += fp.w10 * gv;
        gm.at(ch, fp.y1, fp.x0) += fp.w01 * gv;
        gm.at(ch, fp.y1, fp.x1) += fp.w11 * gv;
      }
    }
  });
  return id;
}

int nn_log_distance(ad::Tape& t, int positions) {
  const Tensor& pv = t.value(positions);
  require(pv.rank() == 2 && pv.dim(1) == 3, "nn_log_distance: expected [m,3]");
  const int m = static_cast<int>(pv.dim(0));
  Tensor out({m});
  std::vector<int> nearest(static_cast<size_t>(m), -1);
  std::vector<real> dists(static_cast<size_t>(m), primitives::kMinInitDistance);
  for (int i = 0; i < m; ++i) {
    real best = std::numeric_limits<real>::infinity();
    int best_j = -1;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      real d2 = 0;
      for (int a = 0; a < 3; ++a) {
        const real d = pv.at(i, a) - pv.at(j, a);
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        best_j = j;
      }
    }
    real dist = m == 1 ? primitives::kMinInitDistance : std::sqrt(best);
    if (dist < primitives::kMinInitDistance) {
      dist = primitives::kMinInitDistance;
      best_j = -1;  // clamped: locally constant, no gradient
    }
    nearest[static_cast<size_t>(i)] = best_j;
    dists[static_cast<size_t>(i)] = dist;
    out[i] = std::log(dist);
  }
  if (!t.requires_grad(positions)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, positions, nearest, dists, m](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    const Tensor& pv = tp.value(positions);
    Tensor& gp = tp.grad(positions);
    for (int i = 0; i < m; ++i) {
      const int j = nearest[static_cast<size_t>(i)];
      if (j < 0) continue;
      const real gv = g[i];
      if (gv == 0.0) continue;
      // d log(d)/d p_i = (p_i - p_j) / d^2
      const real inv_d2 = 1.0 / (dists[static_cast<size_t>(i)] * dists[static_cast<size_t>(i)]);
      for (int a = 0; a < 3; ++a) {
        const real diff = pv.at(i, a) - pv.at(j, a);
        gp.at(i, a) += gv * diff * inv_d2;
        gp.at(j, a) -= gv * diff * inv_d2;
      }
    }
  });
  return id;
}

namespace {

struct FrameResult {
  Eigen::Vector4d q;
  Eigen::Matrix3d r;
  bool degenerate = false;
};

FrameResult frame_from_tb(const Eigen::Vector3d& t_vec, const Eigen::Vector3d& b_vec) {
  FrameResult fr;
  const Eigen::Vector3d n = t_vec.cross(b_vec);
  if (t_vec.norm() < 1e-9 || n.norm() < 1e-9) {
    fr.degenerate = true;
    fr.r = Eigen::Matrix3d::Identity();
    fr.q = Eigen::Vector4d(1, 0, 0, 0);
    return fr;
  }
  const Eigen::Vector3d t_hat = t_vec.normalized();
  Eigen::Vector3d b_perp = b_vec - b_vec.dot(t_hat) * t_hat;
  if (b_perp.norm() < 1e-9) {
    fr.degenerate = true;
    fr.r = Eigen::Matrix3d::Identity();
    fr.q = Eigen::Vector4d(1, 0, 0, 0);
    return fr;
  }
  const Eigen::Vector3d b_hat = b_perp.normalized();
  const Eigen::Vector3d n_hat = t_hat.cross(b_hat);
  fr.r.col(0) = t_hat;
  fr.r.col(1) = b_hat;
  fr.r.col(2) = n_hat;
  fr.q = primitives::rotation_to_quaternion(fr.r);
  return fr;
}

/// Pulls a gradient on the quaternion back through Shepperd's branch formula
/// (with its trailing normalization) onto the rotation matrix.
void quat_from_rotation_backward(const Eigen::Matrix3d& r, const Eigen::Vector4d& gq_in,
                                 Eigen::Matrix3d& gr) {
  const real trace = r(0, 0) + r(1, 1) + r(2, 2);
  int pivot;
  Eigen::Vector3d diag_sign;  // du/dR over (R00, R11, R22)
  struct Pair {
    int a0, a1, b0, b1;
    real sign;
  };
  Pair pairs[3];
  if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
    pivot = 0;
    diag_sign = Eigen::Vector3d(1, 1, 1);
    pairs[0] = {2, 1, 1, 2, -1};
    pairs[1] = {0, 2, 2, 0, -1};
    pairs[2] = {1, 0, 0, 1, -1};
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    pivot = 1;
    diag_sign = Eigen::Vector3d(1, -1, -1);
    pairs[0] = {2, 1, 1, 2, -1};
    pairs[1] = {0, 1, 1, 0, 1};
    pairs[2] = {0, 2, 2, 0, 1};
  } else if (r(1, 1) > r(2, 2)) {
    pivot = 2;
    diag_sign = Eigen::Vector3d(-1, 1, -1);
    pairs[0] = {0, 2, 2, 0, -1};
    pairs[1] = {0, 1, 1, 0, 1};
    pairs[2] = {1, 2, 2, 1, 1};
  } else {
    pivot = 3;
    diag_sign = Eigen::Vector3d(-1, -1, 1);
    pairs[0] = {1, 0, 0, 1, -1};
    pairs[1] = {0, 2, 2, 0, 1};
    pairs[2] = {1, 2, 2, 1, 1};
  }
  const real u = 1.0 + diag_sign(0) * r(0, 0) + diag_sign(1) * r(1, 1) + diag_sign(2) * r(2, 2);
  const real sqrt_u = std::sqrt(u);
  const real s = 2.0 * sqrt_u;

  Eigen::Vector4d q_raw;
  real c[3];
  {
    int slot = 0;
    for (int i = 0; i < 4; ++i) {
      if (i == pivot) {
        q_raw(i) = 0.25 * s;
      } else {
        const Pair& p = pairs[slot];
        c[slot] = r(p.a0, p.a1) + p.sign * r(p.b0, p.b1);
        q_raw(i) = c[slot] / s;
        ++slot;
      }
    }
  }
  const real norm = q_raw.norm();
  const Eigen::Vector4d q_unit = q_raw / norm;
  const Eigen::Vector4d gq = (gq_in - q_unit * q_unit.dot(gq_in)) / norm;

  auto add_du = [&](real coeff) {
    gr(0, 0) += coeff * diag_sign(0);
    gr(1, 1) += coeff * diag_sign(1);
    gr(2, 2) += coeff * diag_sign(2);
  };
  add_du(gq(pivot) / (4.0 * sqrt_u));  // q_p = sqrt(u)/2
  {
    int slot = 0;
    for (int i = 0; i < 4; ++i) {
      if (i == pivot) continue;
      const Pair& p = pairs[slot];
      const real g = gq(i);
      gr(p.a0, p.a1) += g / s;
      gr(p.b0, p.b1) += p.sign * g / s;
      add_du(-g * c[slot] / (s * s * sqrt_u));  // q_i = c/s, ds/du = 1/sqrt(u)
      ++slot;
    }
  }
}

/// Gradient of the quaternion w.r.t. the two (scaled) difference vectors.
void frame_backward(const Eigen::Vector3d& t_vec, const Eigen::Vector3d& b_vec,
                    const Eigen::Vector4d& gq, Eigen::Vector3d& gt, Eigen::Vector3d& gb) {
  gt.setZero();
  gb.setZero();
  const FrameResult fr = frame_from_tb(t_vec, b_vec);
  if (fr.degenerate) return;

  Eigen::Matrix3d gr = Eigen::Matrix3d::Zero();
  quat_from_rotation_backward(fr.r, gq, gr);

  const Eigen::Vector3d t_hat = fr.r.col(0);
  const Eigen::Vector3d b_hat = fr.r.col(1);
  Eigen::Vector3d g_that = gr.col(0);
  Eigen::Vector3d g_bhat = gr.col(1);
  const Eigen::Vector3d g_nhat = gr.col(2);

  // n_hat = t_hat x b_hat
  g_that += b_hat.cross(g_nhat);
  g_bhat += g_nhat.cross(t_hat);

  // b_hat = b_perp/|b_perp| with b_perp = b - (b.t_hat) t_hat
  const Eigen::Vector3d b_perp = b_vec - b_vec.dot(t_hat) * t_hat;
  const real b_perp_norm = b_perp.norm();
  const Eigen::Vector3d g_bperp = (g_bhat - b_hat * b_hat.dot(g_bhat)) / b_perp_norm;
  gb += g_bperp - t_hat * t_hat.dot(g_bperp);
  g_that += -(t_hat.dot(g_bperp)) * b_vec - b_vec.dot(t_hat) * g_bperp;

  // t_hat = t/|t|
  const real t_norm = t_vec.norm();
  gt += (g_that - t_hat * t_hat.dot(g_that)) / t_norm;
}

}  // namespace

int tangent_frame_quats(ad::Tape& t, int map, const std::vector<Eigen::Vector2d>& uv) {
  const Tensor& mv = t.value(map);
  require(mv.rank() == 3 && mv.dim(0) == 3, "tangent_frame_quats: expected [3,H,W]");
  const int m = static_cast<int>(uv.size());
  const real du = 1.0 / static_cast<real>(mv.dim(2));
  const real dv = 1.0 / static_cast<real>(mv.dim(1));
  Tensor out({m, 4});

  struct Saved {
    BilinearFootprint up, um, vp, vm;
    Eigen::Vector3d t_vec, b_vec;
  };
  auto saved = std::make_shared<std::vector<Saved>>(static_cast<size_t>(m));

  for (int i = 0; i < m; ++i) {
    Saved& s = (*saved)[static_cast<size_t>(i)];
    const real u = uv[static_cast<size_t>(i)].x();
    const real v = uv[static_cast<size_t>(i)].y();
    const Eigen::Vector3d pu = sample_chw3(mv, u + du, v, s.up);
    const Eigen::Vector3d mu = sample_chw3(mv, u - du, v, s.um);
    const Eigen::Vector3d pv = sample_chw3(mv, u, v + dv, s.vp);
    const Eigen::Vector3d mvv = sample_chw3(mv, u, v - dv, s.vm);
    s.t_vec = (pu - mu) / (2.0 * du);
    s.b_vec = (pv - mvv) / (2.0 * dv);
    const FrameResult fr = frame_from_tb(s.t_vec, s.b_vec);
    for (int a = 0; a < 4; ++a) out.at(i, a) = fr.q(a);
  }
  if (!t.requires_grad(map)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, map, saved, m, du, dv](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor& gm = tp.grad(map);
    for (int i = 0; i < m; ++i) {
      const Saved& s = (*saved)[static_cast<size_t>(i)];
      const Eigen::Vector4d gq(g.at(i, 0), g.at(i, 1), g.at(i, 2), g.at(i, 3));
      if (gq.isZero()) continue;
      Eigen::Vector3d gt, gb;
      frame_backward(s.t_vec, s.b_vec, gq, gt, gb);
      const Eigen::Vector3d g_pu = gt / (2.0 * du);
      const Eigen::Vector3d g_pv = gb / (2.0 * dv);
      scatter_chw3(gm, s.up, g_pu);
      scatter_chw3(gm, s.um, -g_pu);
      scatter_chw3(gm, s.vp, g_pv);
      scatter_chw3(gm, s.vm, -g_pv);
    }
  });
  return id;
}

namespace {

/// Left-multiplication matrix: (a ⊗ b) = L(a) b.
Eigen::Matrix4d quat_left_matrix(const Eigen::Vector4d& a) {
  Eigen::Matrix4d l;
  l << a(0), -a(1), -a(2), -a(3),
       a(1),  a(0), -a(3),  a(2),
       a(2),  a(3),  a(0), -a(1),
       a(3), -a(2),  a(1),  a(0);
  return l;
}

/// Right-multiplication matrix: (a ⊗ b) = Rm(b) a.
Eigen::Matrix4d quat_right_matrix(const Eigen::Vector4d& b) {
  Eigen::Matrix4d rm;
  rm << b(0), -b(1), -b(2), -b(3),
        b(1),  b(0),  b(3), -b(2),
        b(2), -b(3),  b(0),  b(1),
        b(3),  b(2), -b(1),  b(0);
  return rm;
}

/// d(quaternion)/d(axis-angle), rows = quat components.
Eigen::Matrix<real, 4, 3> axis_angle_quat_jacobian(const Eigen::Vector3d& v) {
  const real theta = v.norm();
  Eigen::Matrix<real, 4, 3> j;
  if (theta < 1e-6) {
    // Series: q0 = cos(t/2) -> dq0/dv = -v/4; k = 1/2 - t^2/48, dk/dv = -v/24
    for (int a = 0; a < 3; ++a) j(0, a) = -0.25 * v(a);
    const real k = 0.5 - theta * theta / 48.0;
    for (int i = 0; i < 3; ++i)
      for (int a = 0; a < 3; ++a) j(i + 1, a) = k * (i == a ? 1.0 : 0.0) - v(i) * v(a) / 24.0;
    return j;
  }
  const real half = 0.5 * theta;
  const real sin_h = std::sin(half), cos_h = std::cos(half);
  const real k = sin_h / theta;
  const real dk_dtheta = (0.5 * cos_h * theta - sin_h) / (theta * theta);
  for (int a = 0; a < 3; ++a) j(0, a) = -0.5 * sin_h * v(a) / theta;
  for (int i = 0; i < 3; ++i)
    for (int a = 0; a < 3; ++a)
      j(i + 1, a) = k * (i == a ? 1.0 : 0.0) + v(i) * dk_dtheta * v(a) / theta;
  return j;
}

}  // namespace

int compose_axis_angle(ad::Tape& t, int axis_angle, int base_quats) {
  const Tensor& av = t.value(axis_angle);
  const Tensor& bv = t.value(base_quats);
  require(av.rank() == 2 && av.dim(1) == 3, "compose_axis_angle: axis_angle must be [m,3]");
  require(bv.rank() == 2 && bv.dim(1) == 4 && bv.dim(0) == av.dim(0),
          "compose_axis_angle: base quats must be [m,4]");
  const int m = static_cast<int>(av.dim(0));
  Tensor out({m, 4});
  for (int i = 0; i < m; ++i) {
    const Eigen::Vector4d dq = primitives::axis_angle_to_quaternion(
        Eigen::Vector3d(av.at(i, 0), av.at(i, 1), av.at(i, 2)));
    const Eigen::Vector4d base(bv.at(i, 0), bv.at(i, 1), bv.at(i, 2), bv.at(i, 3));
    const Eigen::Vector4d q = primitives::quaternion_multiply(dq, base).normalized();
    for (int a = 0; a < 4; ++a) out.at(i, a) = q(a);
  }
  if (!t.requires_grad(axis_angle) && !t.requires_grad(base_quats))
    return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, axis_angle, base_quats, m](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    const Tensor& av = tp.value(axis_angle);
    const Tensor& bv = tp.value(base_quats);
    for (int i = 0; i < m; ++i) {
      const Eigen::Vector4d gq_out(g.at(i, 0), g.at(i, 1), g.at(i, 2), g.at(i, 3));
      if (gq_out.isZero()) continue;
      const Eigen::Vector3d aa(av.at(i, 0), av.at(i, 1), av.at(i, 2));
      const Eigen::Vector4d base(bv.at(i, 0), bv.at(i, 1), bv.at(i, 2), bv.at(i, 3));
      const Eigen::Vector4d dq = primitives::axis_angle_to_quaternion(aa);
      const Eigen::Vector4d prod = primitives::quaternion_multiply(dq, base);
      const real norm = prod.norm();
      const Eigen::Vector4d unit = prod / norm;
      const Eigen::Vector4d g_prod = (gq_out - unit * unit.dot(gq_out)) / norm;
      if (tp.requires_grad(base_quats)) {
        const Eigen::Vector4d gb = quat_left_matrix(dq).transpose() * g_prod;
        Tensor& gbase = tp.grad(base_quats);
        for (int a = 0; a < 4; ++a) gbase.at(i, a) += gb(a);
      }
      if (tp.requires_grad(axis_angle)) {
        const Eigen::Vector4d g_dq = quat_right_matrix(base).transpose() * g_prod;
        const Eigen::Vector3d ga = axis_angle_quat_jacobian(aa).transpose() * g_dq;
        Tensor& gaa = tp.grad(axis_angle);
        for (int a = 0; a < 3; ++a) gaa.at(i, a) += ga(a);
      }
    }
  });
  return id;
}

int rigid_points(ad::Tape& t, int positions, const Eigen::Matrix3d& rotation,
                 const Eigen::Vector3d& translation) {
  const Tensor& pv = t.value(positions);
  require(pv.rank() == 2 && pv.dim(1) == 3, "rigid_points: expected [m,3]");
  const int m = static_cast<int>(pv.dim(0));
  Tensor out({m, 3});
  for (int i = 0; i < m; ++i) {
    const Eigen::Vector3d p(pv.at(i, 0), pv.at(i, 1), pv.at(i, 2));
    const Eigen::Vector3d q = rotation * p + translation;
    for (int a = 0; a < 3; ++a) out.at(i, a) = q(a);
  }
  if (!t.requires_grad(positions)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, positions, rotation, m](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor& gp = tp.grad(positions);
    for (int i = 0; i < m; ++i) {
      const Eigen::Vector3d gv(g.at(i, 0), g.at(i, 1), g.at(i, 2));
      const Eigen::Vector3d gi = rotation.transpose() * gv;
      for (int a = 0; a < 3; ++a) gp.at(i, a) += gi(a);
    }
  });
  return id;
}

int quat_left_multiply(ad::Tape& t, int quats, const Eigen::Vector4d& left) {
  const Tensor& qv = t.value(quats);
  require(qv.rank() == 2 && qv.dim(1) == 4, "quat_left_multiply: expected [m,4]");
  const int m = static_cast<int>(qv.dim(0));
  const Eigen::Matrix4d l = quat_left_matrix(left);
  Tensor out({m, 4});
  for (int i = 0; i < m; ++i) {
    const Eigen::Vector4d q(qv.at(i, 0), qv.at(i, 1), qv.at(i, 2), qv.at(i, 3));
    const Eigen::Vector4d r = l * q;
    for (int a = 0; a < 4; ++a) out.at(i, a) = r(a);
  }
  if (!t.requires_grad(quats)) return t.constant(std::move(out));
  int id = t.make_node(std::move(out), true, nullptr);
  t.set_backward(id, [id, quats, l, m](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    Tensor& gq = tp.grad(quats);
    for (int i = 0; i < m; ++i) {
      const Eigen::Vector4d gv(g.at(i, 0), g.at(i, 1), g.at(i, 2), g.at(i, 3));
      const Eigen::Vector4d gi = l.transpose() * gv;
      for (int a = 0; a < 4; ++a) gq.at(i, a) += gi(a);
    }
  });
  return id;
}

VqResult vector_quantize(ad::Tape& t, int z_rows, int codebook, bool enabled) {
  const Tensor& zv = t.value(z_rows);
  const Tensor& cb = t.value(codebook);
  require(zv.rank() == 2, "vector_quantize: z must be [m,n]");
  require(cb.rank() == 2 && cb.dim(1) == zv.dim(1), "vector_quantize: codebook must be [K,n]");
  require(cb.dim(0) >= 1, "vector_quantize: empty codebook");
  const int m = static_cast<int>(zv.dim(0));
  const int n = static_cast<int>(zv.dim(1));
  const int k = static_cast<int>(cb.dim(0));

  VqResult res;
  res.indices.resize(static_cast<size_t>(m));
  if (!enabled) {
    // Pass-through: identity values, zero losses; indices still reported.
    for (int i = 0; i < m; ++i) {
      real best = std::numeric_limits<real>::infinity();
      int best_k = 0;
      for (int kk = 0; kk < k; ++kk) {
        real d2 = 0;
        for (int a = 0; a < n; ++a) {
          const real d = zv.at(i, a) - cb.at(kk, a);
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          best_k = kk;
        }
      }
      res.indices[static_cast<size_t>(i)] = best_k;
    }
    res.quantized = t.add_const(z_rows, 0.0);
    res.codebook_loss = t.constant(Tensor({1}));
    res.commitment_loss = t.constant(Tensor({1}));
    return res;
  }

  Tensor zq({m, n});
  for (int i = 0; i < m; ++i) {
    real best = std::numeric_limits<real>::infinity();
    int best_k = 0;
    for (int kk = 0; kk < k; ++kk) {
      real d2 = 0;
      for (int a = 0; a < n; ++a) {
        const real d = zv.at(i, a) - cb.at(kk, a);
        d2 += d * d;
      }
      if (d2 < best) {  // strict: ties keep the lowest index
        best = d2;
        best_k = kk;
      }
    }
    res.indices[static_cast<size_t>(i)] = best_k;
    for (int a = 0; a < n; ++a) zq.at(i, a) = cb.at(best_k, a);
  }

  real mse = 0;
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < n; ++a) {
      const real d = zv.at(i, a) - zq.at(i, a);
      mse += d * d;
    }
  mse /= static_cast<real>(m) * n;

  const auto indices = res.indices;

  // Straight-through: value ẑ, upstream gradient copied to z unchanged.
  {
    int id = t.make_node(zq, t.requires_grad(z_rows), nullptr);
    if (t.requires_grad(z_rows)) {
      t.set_backward(id, [id, z_rows](ad::Tape& tp) {
        const Tensor& g = tp.grad(id);
        Tensor& gz = tp.grad(z_rows);
        for (int64_t i = 0; i < g.numel(); ++i) gz[i] += g[i];
      });
    }
    res.quantized = id;
  }
  // Codebook loss: gradient reaches only the codebook entries.
  {
    Tensor v({1});
    v[0] = mse;
    int id = t.make_node(std::move(v), t.requires_grad(codebook), nullptr);
    if (t.requires_grad(codebook)) {
      t.set_backward(id, [id, z_rows, codebook, indices, m, n](ad::Tape& tp) {
        const real g = tp.grad(id)[0];
        if (g == 0.0) return;
        const Tensor& zv = tp.value(z_rows);
        const Tensor& cb = tp.value(codebook);
        Tensor& gc = tp.grad(codebook);
        const real scale = 2.0 * g / (static_cast<real>(m) * n);
        for (int i = 0; i < m; ++i) {
          const int kk = indices[static_cast<size_t>(i)];
          for (int a = 0; a < n; ++a) gc.at(kk, a) += scale * (cb.at(kk, a) - zv.at(i, a));
        }
      });
    }
    res.codebook_loss = id;
  }
  // Commitment loss: gradient reaches only z.
  {
    Tensor v({1});
    v[0] = mse;
    int id = t.make_node(std::move(v), t.requires_grad(z_rows), nullptr);
    if (t.requires_grad(z_rows)) {
      t.set_backward(id, [id, z_rows, codebook, indices, m, n](ad::Tape& tp) {
        const real g = tp.grad(id)[0];
        if (g == 0.0) return;
        const Tensor& zv = tp.value(z_rows);
        const Tensor& cb = tp.value(codebook);
        Tensor& gz = tp.grad(z_rows);
        const real scale = 2.0 * g / (static_cast<real>(m) * n);
        for (int i = 0; i < m; ++i) {
          const int kk = indices[static_cast<size_t>(i)];
          for (int a = 0; a < n; ++a) gz.at(i, a) += scale * (zv.at(i, a) - cb.at(kk, a));
        }
      });
    }
    res.commitment_loss = id;
  }
  return res;
}

RasterizeNode rasterize(ad::Tape& t, int positions, int rotations, int log_scales,
                        int opacity_logits, int sh, const splatter::Camera& cam,
                        const Eigen::Vector3d& background) {
  const Tensor& pos = t.value(positions);
  require(pos.rank() == 2 && pos.dim(1) == 3, "rasterize op: positions must be [m,3]");
  const int m = static_cast<int>(pos.dim(0));
  const Tensor& shv = t.value(sh);
  require(shv.rank() == 2 && shv.dim(0) == m && shv.dim(1) == 48,
          "rasterize op: sh must be [m,48]");

  primitives::GaussianSet g = primitives::GaussianSet::sized(m);
  g.positions = pos;
  g.rotations = t.value(rotations);
  g.log_scales = t.value(log_scales);
  g.opacity_logits = t.value(opacity_logits);
  g.sh = Tensor({m, 16, 3}, shv.data);

  auto fwd = std::make_shared<splatter::RenderResult>(splatter::rasterize(g, cam, background));
  auto gauss = std::make_shared<primitives::GaussianSet>(std::move(g));

  RasterizeNode node;
  node.forward = fwd;
  const bool needs = t.requires_grad(positions) || t.requires_grad(rotations) ||
                     t.requires_grad(log_scales) || t.requires_grad(opacity_logits) ||
                     t.requires_grad(sh);
  Tensor image = fwd->image;
  if (!needs) {
    node.image = t.constant(std::move(image));
    return node;
  }
  int id = t.make_node(std::move(image), true, nullptr);
  t.set_backward(id, [id, positions, rotations, log_scales, opacity_logits, sh, fwd, gauss,
                      m](ad::Tape& tp) {
    const Tensor& g = tp.grad(id);
    splatter::Gradients grads = splatter::rasterize_backward(*fwd, *gauss, g);
    if (tp.requires_grad(positions)) {
      Tensor& gp = tp.grad(positions);
      for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += grads.positions[i];
    }
    if (tp.requires_grad(rotations)) {
      Tensor& gr = tp.grad(rotations);
      for (int64_t i = 0; i < gr.numel(); ++i) gr[i] += grads.rotations[i];
    }
    if (tp.requires_grad(log_scales)) {
      Tensor& gs = tp.grad(log_scales);
      for (int64_t i = 0; i < gs.numel(); ++i) gs[i] += grads.log_scales[i];
    }
    if (tp.requires_grad(opacity_logits)) {
      Tensor& go = tp.grad(opacity_logits);
      for (int64_t i = 0; i < go.numel(); ++i) go[i] += grads.opacity_logits[i];
    }
    if (tp.requires_grad(sh)) {
      Tensor& gh = tp.grad(sh);
      for (int64_t i = 0; i < gh.numel(); ++i) gh[i] += grads.sh[i];
    }
    (void)m;
  });
  node.image = id;
  return node;
}

}  // namespace sprt::graph
