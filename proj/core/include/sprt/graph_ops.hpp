// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "sprt/autodiff.hpp"
#include "sprt/splatter.hpp"
#include "sprt/uvmap.hpp"

namespace sprt::graph {

/// Bilinear gather from a [C,H,W] map at fixed (u,v) positions -> [m,C].
int bilinear_gather(ad::Tape& t, int map, const std::vector<Eigen::Vector2d>& uv);

/// Log of the (floored) nearest-neighbor distance per row of [m,3] -> [m].
/// Matches the scale initialization contract of init_part.
int nn_log_distance(ad::Tape& t, int positions);

/// Tangent-frame quaternions at fixed grid positions from a [3,H,W] position
/// map -> [m,4]. Same construction as primitives::tangent_frame.
int tangent_frame_quats(ad::Tape& t, int map, const std::vector<Eigen::Vector2d>& uv);

/// normalize(quat(axis_angle_rows) * base_rows) -> [m,4].
int compose_axis_angle(ad::Tape& t, int axis_angle, int base_quats);

/// Rigid transform of [m,3] points by a constant rotation/translation.
int rigid_points(ad::Tape& t, int positions, const Eigen::Matrix3d& rotation,
                 const Eigen::Vector3d& translation);

/// Left-multiply each quaternion row by a constant unit quaternion.
int quat_left_multiply(ad::Tape& t, int quats, const Eigen::Vector4d& left);

struct VqResult {
  int quantized = -1;       // straight-through: value ẑ, gradient copied to z
  int codebook_loss = -1;   // mean((sg(z) - ẑ)^2), gradient to the codebook
  int commitment_loss = -1; // mean((z - sg(ẑ))^2), gradient to z
  std::vector<int> indices; // chosen entry per row
};

/// Vector quantization of [m,n] rows against a [K,n] codebook. Ties pick the
/// lowest index. With enabled=false the op passes z through and both losses
/// are constant zero.
VqResult vector_quantize(ad::Tape& t, int z_rows, int codebook, bool enabled);

struct RasterizeNode {
  int image = -1;  // [3,H,W]
  std::shared_ptr<splatter::RenderResult> forward;
};

/// Differentiable splatting of [m,*] parameter rows (sh as [m,48]).
RasterizeNode rasterize(ad::Tape& t, int positions, int rotations, int log_scales,
                        int opacity_logits, int sh, const splatter::Camera& cam,
                        const Eigen::Vector3d& background);

}  // namespace sprt::graph
