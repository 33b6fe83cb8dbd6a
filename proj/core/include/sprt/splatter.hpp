// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "sprt/primitives.hpp"
#include "sprt/tensor.hpp"

namespace sprt::splatter {

/// Rendering constants, config-exposed. The covariance floor doubles as the
/// low-pass filter that keeps every projected splat a fraction of a pixel
/// wide. Change them only before rendering starts.
struct RenderSettings {
  int tile_size = 16;
  real alpha_cap = 0.99;
  real alpha_skip = 1.0 / 255.0;
  real transmittance_cutoff = 1e-4;
  real covariance_floor = 0.3;  // px^2
  real cull_guard_sigmas = 1.3;
};

/// Process-wide settings used by project/rasterize.
RenderSettings& render_settings();

struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> view
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  real fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  real near_clip = 0.01, far_clip = 100.0;

  void validate() const;
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_view(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, real fov_y_radians, int width, int height,
                        real near_clip, real far_clip);
};

struct Splat2D {
  Eigen::Vector2d mean2d;    // pixel coordinates
  Eigen::Matrix2d cov2d;     // with the low-pass floor added
  real depth = 0;            // view-space z
  Eigen::Vector3d color;     // SH-evaluated, clamped at zero
  real opacity = 0;          // activated
};

/// Sigma = R * diag(scale)^2 * R^T for a unit quaternion rotation.
Eigen::Matrix3d build_cov3d(const Eigen::Vector4d& unit_quaternion,
                            const Eigen::Vector3d& scale);

/// Project one activated Gaussian. Returns nullopt when depth-culled or when
/// the projected mean falls outside the image plus the guard band.
std::optional<Splat2D> project(const Eigen::Vector3d& position,
                               const Eigen::Vector4d& unit_quaternion,
                               const Eigen::Vector3d& scale, real opacity, const Tensor& sh,
                               const Camera& cam);

/// Forward rasterization output plus everything the backward pass needs.
struct RenderResult {
  Tensor image;          // [3,H,W]
  Tensor alpha;          // [H,W], accumulated alpha
  Tensor transmittance;  // [H,W], terminal transmittance (1 - alpha)
  std::vector<int32_t> contrib_count;  // per pixel, composited splat count

  struct SavedSplat {
    int input_index;
    Eigen::Vector2d mean;
    Eigen::Matrix2d conic;   // inverse of floored cov2d
    Eigen::Matrix2d cov2d;
    Eigen::Matrix3d cov3d;
    Eigen::Vector3d t;       // view-space position
    Eigen::Vector3d dir;     // unit view direction used for SH
    real dir_len = 0;        // |position - camera center|
    Eigen::Vector3d color;   // clamped
    Eigen::Vector3d raw_color;
    real opacity = 0;        // activated
    real depth = 0;
    real radius = 0;         // pixel cutoff where alpha could reach 1/255
    Eigen::Vector4d unit_q;
    real q_norm = 0;         // norm of the stored (pre-normalization) quaternion
    Eigen::Vector3d scale;   // activated
  };
  std::vector<SavedSplat> splats;          // depth-sorted (ties by input index)
  std::vector<std::vector<int32_t>> tile_splats;  // per tile, indices into splats
  int tiles_x = 0, tiles_y = 0;
  Camera cam;
  Eigen::Vector3d background;
};

/// Tile-based front-to-back compositing over a globally depth-sorted splat
/// list. Activations (exp / logistic / quaternion normalization / SH clamp)
/// happen inside, so gradients come back pre-activation.
RenderResult rasterize(const primitives::GaussianSet& g, const Camera& cam,
                       const Eigen::Vector3d& background);

struct Gradients {
  Tensor positions;       // [n,3]
  Tensor rotations;       // [n,4] w.r.t. the stored quaternion
  Tensor log_scales;      // [n,3]
  Tensor opacity_logits;  // [n]
  Tensor sh;              // [n,16,3]
};

/// Analytic reverse pass. `upstream` is dL/dimage, [3,H,W], for the same
/// inputs that produced `fwd`.
Gradients rasterize_backward(const RenderResult& fwd, const primitives::GaussianSet& g,
                             const Tensor& upstream);

}  // namespace sprt::splatter
