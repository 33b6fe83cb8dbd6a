// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/splatter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sprt/parallel.hpp"

namespace sprt::splatter {

RenderSettings& render_settings() {
  static RenderSettings settings;
  return settings;
}

void Camera::validate() const {
  require(fx > 0 && fy > 0, "camera: focal lengths must be positive");
  require(width > 0 && height > 0, "camera: empty image plane");
  require(near_clip > 0 && far_clip > near_clip, "camera: bad clip depths");
  geometry::RigidTransform t;
  t.rotation = rotation;
  require(t.is_rotation(), "camera: rotation not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, real fov_y_radians, int width, int height,
                       real near_clip, real far_clip) {
  // View axes: +z forward (towards target), +x right, +y down, matching the
  // pixel convention of the projection.
  Eigen::Vector3d fwd = (target - eye).normalized();
  Eigen::Vector3d right = fwd.cross(up).normalized();
  Eigen::Vector3d down = fwd.cross(right).normalized();
  Camera cam;
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = fwd;
  cam.translation = -cam.rotation * eye;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y_radians);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.near_clip = near_clip;
  cam.far_clip = far_clip;
  cam.validate();
  return cam;
}

Eigen::Matrix3d build_cov3d(const Eigen::Vector4d& q, const Eigen::Vector3d& scale) {
  Eigen::Matrix3d r = primitives::quaternion_to_rotation(q);
  Eigen::Matrix3d p = r * scale.asDiagonal();
  return p * p.transpose();
}

namespace {

/// Jacobian of the pinhole projection at view-space point t.
Eigen::Matrix<real, 2, 3> projection_jacobian(const Camera& cam, const Eigen::Vector3d& t) {
  Eigen::Matrix<real, 2, 3> a;
  const real iz = 1.0 / t.z();
  const real iz2 = iz * iz;
  a << cam.fx * iz, 0, -cam.fx * t.x() * iz2, 0, cam.fy * iz, -cam.fy * t.y() * iz2;
  return a;
}

/// Pixel radius beyond which this splat's alpha stays below the skip
/// threshold. Zero means the splat can never contribute.
real cutoff_radius(real opacity, real lambda_max) {
  const real lim = 255.0 * opacity;
  if (lim <= 1.0) return 0.0;
  return std::sqrt(2.0 * std::log(lim) * lambda_max) + 1.0;
}

struct Projected {
  bool visible = false;
  RenderResult::SavedSplat s;
};

Projected project_saved(const Eigen::Vector3d& pos, const Eigen::Vector4d& q_raw,
                        const Eigen::Vector3d& log_scale, real logit, const real* sh16x3,
                        const Camera& cam, int input_index) {
  const RenderSettings& rs = render_settings();
  Projected out;
  const Eigen::Vector3d t = cam.to_view(pos);
  if (t.z() <= cam.near_clip || t.z() >= cam.far_clip) return out;

  RenderResult::SavedSplat s;
  s.input_index = input_index;
  s.t = t;
  s.depth = t.z();
  s.q_norm = q_raw.norm();
  require(s.q_norm > 1e-12, "rasterize: zero quaternion");
  s.unit_q = q_raw / s.q_norm;
  s.scale = Eigen::Vector3d(std::exp(log_scale(0)), std::exp(log_scale(1)), std::exp(log_scale(2)));
  s.opacity = 1.0 / (1.0 + std::exp(-logit));

  s.cov3d = build_cov3d(s.unit_q, s.scale);
  const Eigen::Matrix<real, 2, 3> m = projection_jacobian(cam, t) * cam.rotation;
  s.cov2d = m * s.cov3d * m.transpose() + rs.covariance_floor * Eigen::Matrix2d::Identity();

  s.mean = Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);

  // Guard-band cull on the projected mean.
  const real half_trace = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
  const real det = s.cov2d.determinant();
  const real lambda_max =
      half_trace + std::sqrt(std::max(half_trace * half_trace - det, 0.0));
  const real guard = rs.cull_guard_sigmas * std::sqrt(lambda_max);
  if (s.mean.x() < -guard || s.mean.x() > cam.width + guard || s.mean.y() < -guard ||
      s.mean.y() > cam.height + guard)
    return out;

  s.radius = cutoff_radius(s.opacity, lambda_max);
  if (s.radius <= 0.0) return out;

  s.conic = s.cov2d.inverse();

  const Eigen::Vector3d rel = pos - cam.center();
  s.dir_len = rel.norm();
  s.dir = rel / s.dir_len;
  real basis[primitives::kShCoeffs];
  primitives::sh_basis(s.dir, basis);
  for (int ch = 0; ch < 3; ++ch) {
    real c = 0.5;
    for (int i = 0; i < primitives::kShCoeffs; ++i) c += sh16x3[i * 3 + ch] * basis[i];
    s.raw_color(ch) = c;
    s.color(ch) = std::max(c, 0.0);
  }
  out.visible = true;
  out.s = s;
  return out;
}

}  // namespace

std::optional<Splat2D> project(const Eigen::Vector3d& position, const Eigen::Vector4d& q,
                               const Eigen::Vector3d& scale, real opacity, const Tensor& sh,
                               const Camera& cam) {
  cam.validate();
  require(sh.rank() == 2 && sh.dim(0) == primitives::kShCoeffs && sh.dim(1) == 3,
          "project: sh must be [16,3]");
  Eigen::Vector3d log_scale(std::log(scale(0)), std::log(scale(1)), std::log(scale(2)));
  real logit = std::log(opacity / (1.0 - opacity));
  Projected p = project_saved(position, q, log_scale, logit, sh.data.data(), cam, 0);
  if (!p.visible) return std::nullopt;
  Splat2D s;
  s.mean2d = p.s.mean;
  s.cov2d = p.s.cov2d;
  s.depth = p.s.depth;
  s.color = p.s.color;
  s.opacity = p.s.opacity;
  return s;
}

RenderResult rasterize(const primitives::GaussianSet& g, const Camera& cam,
                       const Eigen::Vector3d& background) {
  const RenderSettings& rs = render_settings();
  cam.validate();
  const int n = g.count();
  RenderResult out;
  out.cam = cam;
  out.background = background;
  out.image = Tensor({3, cam.height, cam.width});
  out.alpha = Tensor({cam.height, cam.width});
  out.transmittance = Tensor({cam.height, cam.width});
  out.contrib_count.assign(static_cast<size_t>(cam.width) * cam.height, 0);
  out.tiles_x = (cam.width + rs.tile_size - 1) / rs.tile_size;
  out.tiles_y = (cam.height + rs.tile_size - 1) / rs.tile_size;

  out.splats.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Projected p = project_saved(
        Eigen::Vector3d(g.positions.at(i, 0), g.positions.at(i, 1), g.positions.at(i, 2)),
        Eigen::Vector4d(g.rotations.at(i, 0), g.rotations.at(i, 1), g.rotations.at(i, 2),
                        g.rotations.at(i, 3)),
        Eigen::Vector3d(g.log_scales.at(i, 0), g.log_scales.at(i, 1), g.log_scales.at(i, 2)),
        g.opacity_logits[i], g.sh.data.data() + static_cast<size_t>(i) * 48, cam, i);
    if (p.visible) out.splats.push_back(p.s);
  }

  // Global depth sort; ties broken by input index for determinism.
  std::sort(out.splats.begin(), out.splats.end(),
            [](const RenderResult::SavedSplat& a, const RenderResult::SavedSplat& b) {
              if (a.depth != b.depth) return a.depth < b.depth;
              return a.input_index < b.input_index;
            });

  // Tile binning; lists stay depth-ordered because splats are visited in order.
  out.tile_splats.assign(static_cast<size_t>(out.tiles_x) * out.tiles_y, {});
  for (size_t si = 0; si < out.splats.size(); ++si) {
    const auto& s = out.splats[si];
    const int x0 = std::max(0, static_cast<int>(std::floor((s.mean.x() - s.radius) / rs.tile_size)));
    const int x1 = std::min(out.tiles_x - 1,
                            static_cast<int>(std::floor((s.mean.x() + s.radius) / rs.tile_size)));
    const int y0 = std::max(0, static_cast<int>(std::floor((s.mean.y() - s.radius) / rs.tile_size)));
    const int y1 = std::min(out.tiles_y - 1,
                            static_cast<int>(std::floor((s.mean.y() + s.radius) / rs.tile_size)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        out.tile_splats[static_cast<size_t>(ty) * out.tiles_x + tx].push_back(
            static_cast<int32_t>(si));
  }

  const int64_t tile_total = static_cast<int64_t>(out.tiles_x) * out.tiles_y;
  parallel_for(tile_total, [&](int64_t tb, int64_t te) {
    for (int64_t tile = tb; tile < te; ++tile) {
      const int tx = static_cast<int>(tile % out.tiles_x);
      const int ty = static_cast<int>(tile / out.tiles_x);
      const auto& list = out.tile_splats[static_cast<size_t>(tile)];
      const int px0 = tx * rs.tile_size, px1 = std::min(cam.width, px0 + rs.tile_size);
      const int py0 = ty * rs.tile_size, py1 = std::min(cam.height, py0 + rs.tile_size);
      for (int py = py0; py < py1; ++py) {
        for (int px = px0; px < px1; ++px) {
          const Eigen::Vector2d pix(px + 0.5, py + 0.5);
          real t_acc = 1.0;
          Eigen::Vector3d color = Eigen::Vector3d::Zero();
          int count = 0;
          for (int32_t si : list) {
            const auto& s = out.splats[static_cast<size_t>(si)];
            const Eigen::Vector2d d = pix - s.mean;
            const real power = -0.5 * d.dot(s.conic * d);
            const real alpha = std::min(rs.alpha_cap, s.opacity * std::exp(power));
            if (alpha < rs.alpha_skip) continue;
            color += s.color * (alpha * t_acc);
            t_acc *= 1.0 - alpha;
            ++count;
            if (t_acc < rs.transmittance_cutoff) break;
          }
          color += t_acc * background;
          for (int ch = 0; ch < 3; ++ch) out.image.at(ch, py, px) = color(ch);
          out.alpha.at(py, px) = 1.0 - t_acc;
          out.transmittance.at(py, px) = t_acc;
          out.contrib_count[static_cast<size_t>(py) * cam.width + px] = count;
        }
      }
    }
  });
  return out;
}

namespace {

/// Per-splat pixel-space gradient accumulator.
struct SplatGrad {
  Eigen::Vector3d dcolor = Eigen::Vector3d::Zero();
  real dopacity = 0;
  Eigen::Vector2d dmean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d dconic = Eigen::Matrix2d::Zero();
};

}  // namespace

Gradients rasterize_backward(const RenderResult& fwd, const primitives::GaussianSet& g,
                             const Tensor& upstream) {
  const RenderSettings& rs = render_settings();
  const Camera& cam = fwd.cam;
  require(upstream.rank() == 3 && upstream.dim(0) == 3 && upstream.dim(1) == cam.height &&
              upstream.dim(2) == cam.width,
          "rasterize_backward: upstream must be [3,H,W]");
  require(fwd.contrib_count.size() == static_cast<size_t>(cam.width) * cam.height,
          "rasterize_backward: aux buffers missing or mismatched");

  const int n = g.count();
  Gradients grads;
  grads.positions = Tensor({n, 3});
  grads.rotations = Tensor({n, 4});
  grads.log_scales = Tensor({n, 3});
  grads.opacity_logits = Tensor({n});
  grads.sh = Tensor({n, primitives::kShCoeffs, 3});

  const int64_t tile_total = static_cast<int64_t>(fwd.tiles_x) * fwd.tiles_y;
  // Tile-local accumulation, reduced tile-major afterwards: the result does
  // not depend on how tiles were distributed over threads.
  std::vector<std::vector<SplatGrad>> tile_grads(static_cast<size_t>(tile_total));

  parallel_for(tile_total, [&](int64_t tb, int64_t te) {
    std::vector<int32_t> hit;       // indices into the tile list
    std::vector<real> hit_alpha;
    for (int64_t tile = tb; tile < te; ++tile) {
      const auto& list = fwd.tile_splats[static_cast<size_t>(tile)];
      if (list.empty()) continue;
      auto& local = tile_grads[static_cast<size_t>(tile)];
      local.assign(list.size(), SplatGrad{});
      const int tx = static_cast<int>(tile % fwd.tiles_x);
      const int ty = static_cast<int>(tile / fwd.tiles_x);
      const int px0 = tx * rs.tile_size, px1 = std::min(cam.width, px0 + rs.tile_size);
      const int py0 = ty * rs.tile_size, py1 = std::min(cam.height, py0 + rs.tile_size);
      for (int py = py0; py < py1; ++py) {
        for (int px = px0; px < px1; ++px) {
          const int count = fwd.contrib_count[static_cast<size_t>(py) * cam.width + px];
          if (count == 0 && fwd.transmittance.at(py, px) == 1.0) {
            // background only; no splat gradient at this pixel
            continue;
          }
          const Eigen::Vector2d pix(px + 0.5, py + 0.5);
          const Eigen::Vector3d dl_dc(upstream.at(0, py, px), upstream.at(1, py, px),
                                      upstream.at(2, py, px));
          // Replay the forward compositing to recover the contributor list.
          hit.clear();
          hit_alpha.clear();
          for (size_t li = 0; li < list.size() && static_cast<int>(hit.size()) < count; ++li) {
            const auto& s = fwd.splats[static_cast<size_t>(list[li])];
            const Eigen::Vector2d d = pix - s.mean;
            const real power = -0.5 * d.dot(s.conic * d);
            const real alpha = std::min(rs.alpha_cap, s.opacity * std::exp(power));
            if (alpha < rs.alpha_skip) continue;
            hit.push_back(static_cast<int32_t>(li));
            hit_alpha.push_back(alpha);
          }
          // Walk contributors back-to-front.
          real t_behind = fwd.transmittance.at(py, px);
          Eigen::Vector3d suffix = t_behind * fwd.background;  // sum_{j>i} c_j a_j T_j + bg term
          for (int k = static_cast<int>(hit.size()) - 1; k >= 0; --k) {
            const int32_t li = hit[static_cast<size_t>(k)];
            const auto& s = fwd.splats[static_cast<size_t>(list[li])];
            const real alpha = hit_alpha[static_cast<size_t>(k)];
            const real one_minus = 1.0 - alpha;
            const real t_before = t_behind / one_minus;  // transmittance in front of splat k

            SplatGrad& sg = local[static_cast<size_t>(li)];
            sg.dcolor += dl_dc * (alpha * t_before);

            const real dl_dalpha =
                dl_dc.dot(s.color * t_before - suffix / one_minus);
            if (alpha < rs.alpha_cap) {  // the cap zeroes the local derivative
              const Eigen::Vector2d d = pix - s.mean;
              const real gauss = alpha / s.opacity;  // exp(power)
              sg.dopacity += dl_dalpha * gauss;
              const real dl_dpower = dl_dalpha * alpha;
              sg.dmean += dl_dpower * (s.conic * d);
              sg.dconic += dl_dpower * (-0.5) * (d * d.transpose());
            }
            suffix += s.color * (alpha * t_before);
            t_behind = t_before;
          }
        }
      }
    }
  });

  // Reduce per-tile buffers in tile order, then run the per-splat geometry
  // chain once per visible splat.
  std::vector<SplatGrad> acc(fwd.splats.size());
  for (int64_t tile = 0; tile < tile_total; ++tile) {
    const auto& list = fwd.tile_splats[static_cast<size_t>(tile)];
    const auto& local = tile_grads[static_cast<size_t>(tile)];
    if (local.empty()) continue;
    for (size_t li = 0; li < list.size(); ++li) {
      auto& a = acc[static_cast<size_t>(list[li])];
      a.dcolor += local[li].dcolor;
      a.dopacity += local[li].dopacity;
      a.dmean += local[li].dmean;
      a.dconic += local[li].dconic;
    }
  }

  for (size_t si = 0; si < fwd.splats.size(); ++si) {
    const auto& s = fwd.splats[si];
    const SplatGrad& a = acc[si];
    const int i = s.input_index;

    // --- color -> sh and view direction ---
    real basis[primitives::kShCoeffs];
    primitives::sh_basis(s.dir, basis);
    real basis_grad[primitives::kShCoeffs][3];
    primitives::sh_basis_grad(s.dir, basis_grad);
    Eigen::Vector3d dl_ddir = Eigen::Vector3d::Zero();
    for (int ch = 0; ch < 3; ++ch) {
      if (s.raw_color(ch) < 0.0) continue;  // clamped at zero
      const real dc = a.dcolor(ch);
      if (dc == 0.0) continue;
      for (int k = 0; k < primitives::kShCoeffs; ++k) {
        grads.sh.at(i, k, ch) += dc * basis[k];
        const real h = g.sh.at(i, k, ch);
        dl_ddir += dc * h * Eigen::Vector3d(basis_grad[k][0], basis_grad[k][1], basis_grad[k][2]);
      }
    }
    // dir = rel/|rel|
    Eigen::Vector3d dl_dpos_dir =
        (Eigen::Matrix3d::Identity() - s.dir * s.dir.transpose()) * dl_ddir / s.dir_len;

    // --- opacity logit ---
    grads.opacity_logits[i] += a.dopacity * s.opacity * (1.0 - s.opacity);

    // --- conic -> cov2d ---
    const Eigen::Matrix2d dl_dcov2d = -s.conic * a.dconic * s.conic;

    // --- cov2d = M cov3d M^T + floor, M = A V ---
    const Eigen::Matrix<real, 2, 3> aj = projection_jacobian(cam, s.t);
    const Eigen::Matrix<real, 2, 3> m = aj * cam.rotation;
    const Eigen::Matrix3d dl_dcov3d = m.transpose() * dl_dcov2d * m;
    const Eigen::Matrix<real, 2, 3> dl_dm =
        (dl_dcov2d + dl_dcov2d.transpose()) * m * s.cov3d;
    const Eigen::Matrix<real, 2, 3> dl_da = dl_dm * cam.rotation.transpose();

    // --- projected mean -> view position (dm/dt equals the Jacobian A) ---
    Eigen::Vector3d dl_dt = aj.transpose() * a.dmean;
    // A's own dependence on t.
    const real iz = 1.0 / s.t.z();
    const real iz2 = iz * iz;
    const real iz3 = iz2 * iz;
    dl_dt.x() += dl_da(0, 2) * (-cam.fx * iz2);
    dl_dt.y() += dl_da(1, 2) * (-cam.fy * iz2);
    dl_dt.z() += dl_da(0, 0) * (-cam.fx * iz2) + dl_da(1, 1) * (-cam.fy * iz2) +
                 dl_da(0, 2) * (2.0 * cam.fx * s.t.x() * iz3) +
                 dl_da(1, 2) * (2.0 * cam.fy * s.t.y() * iz3);

    // --- view position -> world position ---
    const Eigen::Vector3d dl_dpos = cam.rotation.transpose() * dl_dt + dl_dpos_dir;
    for (int axis = 0; axis < 3; ++axis) grads.positions.at(i, axis) += dl_dpos(axis);

    // --- cov3d = P P^T with P = R diag(scale) ---
    const Eigen::Matrix3d r = primitives::quaternion_to_rotation(s.unit_q);
    const Eigen::Matrix3d p = r * s.scale.asDiagonal();
    const Eigen::Matrix3d dl_dp = (dl_dcov3d + dl_dcov3d.transpose()) * p;
    Eigen::Matrix3d dl_dr;
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) dl_dr(row, col) = dl_dp(row, col) * s.scale(col);
    for (int col = 0; col < 3; ++col) {
      real ds = 0;
      for (int row = 0; row < 3; ++row) ds += dl_dp(row, col) * r(row, col);
      grads.log_scales.at(i, col) += ds * s.scale(col);  // chain through exp
    }

    // --- rotation matrix -> unit quaternion -> stored quaternion ---
    const real w = s.unit_q(0), x = s.unit_q(1), y = s.unit_q(2), z = s.unit_q(3);
    auto gq = [&](int row, int col) { return dl_dr(row, col); };
    Eigen::Vector4d dl_dq_unit;
    dl_dq_unit(0) = 2.0 * (x * (gq(2, 1) - gq(1, 2)) + y * (gq(0, 2) - gq(2, 0)) +
                           z * (gq(1, 0) - gq(0, 1)));
    dl_dq_unit(1) = 2.0 * (w * (gq(2, 1) - gq(1, 2)) + y * (gq(1, 0) + gq(0, 1)) +
                           z * (gq(0, 2) + gq(2, 0)) - 2.0 * x * (gq(1, 1) + gq(2, 2)));
    dl_dq_unit(2) = 2.0 * (w * (gq(0, 2) - gq(2, 0)) + x * (gq(1, 0) + gq(0, 1)) +
                           z * (gq(2, 1) + gq(1, 2)) - 2.0 * y * (gq(0, 0) + gq(2, 2)));
    dl_dq_unit(3) = 2.0 * (w * (gq(1, 0) - gq(0, 1)) + x * (gq(0, 2) + gq(2, 0)) +
                           y * (gq(2, 1) + gq(1, 2)) - 2.0 * z * (gq(0, 0) + gq(1, 1)));
    const Eigen::Vector4d dl_dq_raw =
        (dl_dq_unit - s.unit_q * s.unit_q.dot(dl_dq_unit)) / s.q_norm;
    for (int axis = 0; axis < 4; ++axis) grads.rotations.at(i, axis) += dl_dq_raw(axis);
  }

  return grads;
}

}  // namespace sprt::splatter
