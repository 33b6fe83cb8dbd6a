// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "sprt/geometry.hpp"
#include "sprt/tensor.hpp"
#include "sprt/uvmap.hpp"

namespace sprt::primitives {

/// Number of spherical harmonics coefficients per channel (4 bands).
inline constexpr int kShCoeffs = 16;

/// Opacity logit that activates to 0.7.
inline constexpr real kInitOpacityLogit = 0.8472978603872034;  // log(0.7/0.3)

/// Minimum nearest-neighbor distance used for scale init, in model units.
inline constexpr real kMinInitDistance = 1e-3;

/// A batch of 3D Gaussians. Scales and opacities are stored pre-activation
/// (log-scale / logit); rotations are unit quaternions (w,x,y,z).
struct GaussianSet {
  Tensor positions;       // [n,3]
  Tensor rotations;       // [n,4]
  Tensor log_scales;      // [n,3]
  Tensor opacity_logits;  // [n]
  Tensor sh;              // [n,16,3]

  int count() const { return positions.numel() == 0 ? 0 : static_cast<int>(positions.dim(0)); }

  static GaussianSet empty() { return sized(0); }
  static GaussianSet sized(int n);
  static GaussianSet concat(const GaussianSet& a, const GaussianSet& b);

  void save(const std::string& path) const;
  static GaussianSet load(const std::string& path);
};

inline real activate_scale(real log_scale) { return std::exp(log_scale); }
inline real activate_opacity(real logit) { return 1.0 / (1.0 + std::exp(-logit)); }

/// Base per-part parameters produced by initialization from a position map.
struct PartParams {
  std::string region;
  uvmap::SampleGrid grid;
  Tensor positions;       // [m,3]
  Tensor rotations;       // [m,4], from tangent frames
  Tensor log_scales;      // [m,3], log of nearest-neighbor distance
  real opacity_logit = kInitOpacityLogit;

  int size() const { return static_cast<int>(positions.dim(0)); }
};

struct InitDiagnostics {
  int frame_fallbacks = 0;     // degenerate tangent frames replaced by identity
  int clamped_distances = 0;   // nearest-neighbor distances clamped to the floor
};

/// Sample base positions from a 3-channel position map at the grid, derive
/// isotropic scales from nearest-neighbor distances and rotations from the
/// local tangent frame. Single-sample grids fall back to the distance floor.
PartParams init_part(const uvmap::UvMap& position_map, const uvmap::SampleGrid& grid,
                     InitDiagnostics* diag = nullptr);

/// Surface frame [T̂ B̂ N̂] at (u,v) from central differences of bilinear
/// samples (one-texel step). Gram-Schmidt keeps T̂ and re-orthogonalizes, so
/// the result is a proper rotation; degenerate gradients yield identity.
Eigen::Matrix3d tangent_frame(const uvmap::UvMap& position_map, real u, real v,
                              bool* degenerate = nullptr);

/// Rotation matrix -> quaternion (w,x,y,z), max-diagonal branch selection.
Eigen::Vector4d rotation_to_quaternion(const Eigen::Matrix3d& r);
Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q);

/// Axis-angle (angle = |v|) -> quaternion, smooth at zero.
Eigen::Vector4d axis_angle_to_quaternion(const Eigen::Vector3d& v);
Eigen::Vector4d quaternion_multiply(const Eigen::Vector4d& a, const Eigen::Vector4d& b);

/// Regressed corrective offsets for one part.
struct Offsets {
  Tensor dpos;        // [m,3]
  Tensor drot;        // [m,3] axis-angle
  Tensor dlog_scale;  // [m,3]
  Tensor dlogit;      // [m]
};

/// Apply additive offsets to the base parameters: positions shift, rotations
/// compose as quat(drot) * base, scale/opacity offsets add pre-activation.
/// SH comes straight from the color regressor.
GaussianSet apply_offsets(const PartParams& part, const Offsets& offsets, const Tensor& sh);

/// Basis values Y_i(dir) for the 16 coefficients, and their gradients.
void sh_basis(const Eigen::Vector3d& dir, real out[kShCoeffs]);
void sh_basis_grad(const Eigen::Vector3d& dir, real out[kShCoeffs][3]);

/// c = 0.5 + sum_i h[i]*Y_i(dir) per channel, unclamped (the renderer clamps
/// at zero). dir must be unit length.
Eigen::Vector3d eval_sh(const Tensor& h, const Eigen::Vector3d& dir);

/// Rigid world placement: positions transformed, rotations left-composed with
/// the global rotation, everything else unchanged.
GaussianSet to_world(const GaussianSet& g, const geometry::RigidTransform& global);

/// Optional per-primitive neck skinning: each primitive borrows the blended
/// joint transform of its nearest vertex in reference_positions before the
/// global transform is applied.
GaussianSet to_world_lbs(const GaussianSet& g, const geometry::Pose& pose,
                         const geometry::MorphableModel& model, const Tensor& reference_positions);

}  // namespace sprt::primitives
