// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "sprt/geometry.hpp"
#include "sprt/tensor.hpp"

namespace sprt::uvmap {

/// A multichannel image over the UV atlas. data is [H,W,C]; validity marks
/// texels covered by a triangle during rasterization.
struct UvMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  Tensor data;                    // [H,W,C]
  std::vector<uint8_t> validity;  // H*W, row-major

  UvMap() = default;
  UvMap(int w, int h, int c)
      : width(w), height(h), channels(c), data({h, w, c}),
        validity(static_cast<size_t>(w) * h, 0) {}

  bool valid_at(int x, int y) const { return validity[static_cast<size_t>(y) * width + x] != 0; }
  real& at(int x, int y, int c) { return data.at(y, x, c); }
  real at(int x, int y, int c) const { return data.at(y, x, c); }

  /// [C,H,W] copy for the network side.
  Tensor to_chw() const;
  static UvMap from_chw(const Tensor& chw);
};

struct RasterStats {
  int degenerate_faces = 0;
  int covered_texels = 0;
};

/// Rasterize per-vertex attributes [V,C] into UV space. A texel receives the
/// barycentric blend of the first face whose UV triangle contains its center;
/// uncovered texels stay zero with validity=false. Degenerate UV triangles
/// (area < 1e-12) are skipped and counted.
UvMap rasterize_uv(const geometry::MorphableModel& model, const Tensor& attributes, int width,
                   int height, RasterStats* stats = nullptr);

/// One dilation pass: invalid texels with at least one valid 4-neighbor take
/// the mean of those neighbors (still marked invalid-derived = valid after).
void dilate_once(UvMap& map);

/// The four-texel footprint of a bilinear lookup. Texel centers sit at
/// ((i+0.5)/W, (j+0.5)/H); coordinates clamp to the center grid (no wrap).
struct BilinearFootprint {
  int x0, y0, x1, y1;
  real w00, w10, w01, w11;  // weight for (x0,y0), (x1,y0), (x0,y1), (x1,y1)
};
BilinearFootprint bilinear_footprint(int width, int height, real u, real v);

/// Interpolate the map at (u,v) in [0,1]^2. Throws on out-of-range input.
std::vector<real> bilinear_sample(const UvMap& map, real u, real v);

/// Scatter the upstream gradient onto the four contributing texels. Gradients
/// w.r.t. (u,v) are not produced; sample positions are fixed grids here.
Tensor bilinear_sample_backward(const UvMap& map, real u, real v,
                                const std::vector<real>& upstream);

/// Fixed lattice of sample positions inside one atlas region.
struct SampleGrid {
  std::string region;
  int grid_w = 0;
  int grid_h = 0;
  std::vector<Eigen::Vector2d> uv;

  int size() const { return static_cast<int>(uv.size()); }
};

/// Evenly spaced grid_w x grid_h points inside rect (u0,v0,u1,v1), inset by
/// `margin` in UV units on every side.
SampleGrid make_sample_grid(const std::string& region, const Eigen::Vector4d& rect, int grid_w,
                            int grid_h, real margin);

/// 8-bit PNG export for 3-channel maps. apply_srgb runs the linear-to-sRGB
/// curve first (used for texture maps; position maps export raw).
void export_png(const UvMap& map, const std::string& path, bool apply_srgb);

}  // namespace sprt::uvmap
