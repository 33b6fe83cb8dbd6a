// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/uvmap.hpp"

#include <algorithm>
#include <cmath>

#include "sprt/image.hpp"

namespace sprt::uvmap {

Tensor UvMap::to_chw() const {
  Tensor t({channels, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) t.at(c, y, x) = data.at(y, x, c);
  return t;
}

UvMap UvMap::from_chw(const Tensor& chw) {
  require(chw.rank() == 3, "from_chw: expected [C,H,W]");
  UvMap m(static_cast<int>(chw.dim(2)), static_cast<int>(chw.dim(1)),
          static_cast<int>(chw.dim(0)));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int c = 0; c < m.channels; ++c) m.at(x, y, c) = chw.at(c, y, x);
  std::fill(m.validity.begin(), m.validity.end(), 1);
  return m;
}

UvMap rasterize_uv(const geometry::MorphableModel& model, const Tensor& attributes, int width,
                   int height, RasterStats* stats) {
  require(attributes.rank() == 2, "rasterize_uv: attributes must be [V,C]");
  require(attributes.dim(0) == model.num_vertices(),
          "rasterize_uv: attribute count != vertex count");
  require(width >= 1 && height >= 1, "rasterize_uv: empty target");
  const int channels = static_cast<int>(attributes.dim(1));
  UvMap map(width, height, channels);
  RasterStats local;

  for (size_t f = 0; f < model.faces.size(); ++f) {
    const auto& uvs = model.face_uvs[f];
    const Eigen::Vector2d a = uvs[0], b = uvs[1], c = uvs[2];
    const real area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (std::abs(area) < 1e-12) {
      ++local.degenerate_faces;
      continue;
    }
    // Texel-space bounding box of the triangle.
    const real u_min = std::min({a.x(), b.x(), c.x()});
    const real u_max = std::max({a.x(), b.x(), c.x()});
    const real v_min = std::min({a.y(), b.y(), c.y()});
    const real v_max = std::max({a.y(), b.y(), c.y()});
    const int x0 = std::max(0, static_cast<int>(std::floor(u_min * width - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(u_max * width - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(v_min * height - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(v_max * height - 0.5)));

    const auto& face = model.faces[f];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (map.valid_at(x, y)) continue;  // first covering face wins
        const Eigen::Vector2d p((x + 0.5) / width, (y + 0.5) / height);
        const real la = ((b.x() - p.x()) * (c.y() - p.y()) - (b.y() - p.y()) * (c.x() - p.x())) / area;
        const real lb = ((c.x() - p.x()) * (a.y() - p.y()) - (c.y() - p.y()) * (a.x() - p.x())) / area;
        const real lc = 1.0 - la - lb;
        constexpr real tol = -1e-9;
        if (la < tol || lb < tol || lc < tol) continue;
        for (int ch = 0; ch < channels; ++ch)
          map.at(x, y, ch) = la * attributes.at(face[0], ch) + lb * attributes.at(face[1], ch) +
                             lc * attributes.at(face[2], ch);
        map.validity[static_cast<size_t>(y) * width + x] = 1;
        ++local.covered_texels;
      }
    }
  }
  if (stats) *stats = local;
  return map;
}

void dilate_once(UvMap& map) {
  UvMap src = map;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      if (src.valid_at(x, y)) continue;
      int n = 0;
      std::vector<real> acc(static_cast<size_t>(map.channels), 0.0);
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || ny < 0 || nx >= map.width || ny >= map.height) continue;
        if (!src.valid_at(nx, ny)) continue;
        ++n;
        for (int c = 0; c < map.channels; ++c) acc[static_cast<size_t>(c)] += src.at(nx, ny, c);
      }
      if (n == 0) continue;
      for (int c = 0; c < map.channels; ++c) map.at(x, y, c) = acc[static_cast<size_t>(c)] / n;
      map.validity[static_cast<size_t>(y) * map.width + x] = 1;
    }
}

BilinearFootprint bilinear_footprint(int width, int height, real u, real v) {
  require(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0, "bilinear: (u,v) outside [0,1]^2");
  real gx = u * width - 0.5;
  real gy = v * height - 0.5;
  gx = std::clamp(gx, 0.0, static_cast<real>(width - 1));
  gy = std::clamp(gy, 0.0, static_cast<real>(height - 1));
  BilinearFootprint fp;
  fp.x0 = static_cast<int>(std::floor(gx));
  fp.y0 = static_cast<int>(std::floor(gy));
  if (fp.x0 > width - 2) fp.x0 = std::max(0, width - 2);
  if (fp.y0 > height - 2) fp.y0 = std::max(0, height - 2);
  fp.x1 = std::min(fp.x0 + 1, width - 1);
  fp.y1 = std::min(fp.y0 + 1, height - 1);
  const real fx = gx - fp.x0;
  const real fy = gy - fp.y0;
  fp.w00 = (1 - fx) * (1 - fy);
  fp.w10 = fx * (1 - fy);
  fp.w01 = (1 - fx) * fy;
  fp.w11 = fx * fy;
  return fp;
}

std::vector<real> bilinear_sample(const UvMap& map, real u, real v) {
  const BilinearFootprint fp = bilinear_footprint(map.width, map.height, u, v);
  std::vector<real> out(static_cast<size_t>(map.channels));
  for (int c = 0; c < map.channels; ++c)
    out[static_cast<size_t>(c)] = fp.w00 * map.at(fp.x0, fp.y0, c) + fp.w10 * map.at(fp.x1, fp.y0, c) +
                                  fp.w01 * map.at(fp.x0, fp.y1, c) + fp.w11 * map.at(fp.x1, fp.y1, c);
  return out;
}

Tensor bilinear_sample_backward(const UvMap& map, real u, real v,
                                const std::vector<real>& upstream) {
  require(static_cast<int>(upstream.size()) == map.channels,
          "bilinear backward: upstream channel mismatch");
  const BilinearFootprint fp = bilinear_footprint(map.width, map.height, u, v);
  Tensor grad({map.height, map.width, map.channels});
  for (int c = 0; c < map.channels; ++c) {
    const real g = upstream[static_cast<size_t>(c)];
    grad.at(fp.y0, fp.x0, c) += fp.w00 * g;
    grad.at(fp.y0, fp.x1, c) += fp.w10 * g;
    grad.at(fp.y1, fp.x0, c) += fp.w01 * g;
    grad.at(fp.y1, fp.x1, c) += fp.w11 * g;
  }
  return grad;
}

SampleGrid make_sample_grid(const std::string& region, const Eigen::Vector4d& rect, int grid_w,
                            int grid_h, real margin) {
  require(grid_w >= 1 && grid_h >= 1, "sample grid: empty");
  SampleGrid g;
  g.region = region;
  g.grid_w = grid_w;
  g.grid_h = grid_h;
  const real u0 = rect(0) + margin, v0 = rect(1) + margin;
  const real u1 = rect(2) - margin, v1 = rect(3) - margin;
  require(u1 > u0 && v1 > v0, "sample grid: margin eats the whole region");
  g.uv.reserve(static_cast<size_t>(grid_w) * grid_h);
  for (int j = 0; j < grid_h; ++j)
    for (int i = 0; i < grid_w; ++i)
      g.uv.emplace_back(u0 + (i + 0.5) * (u1 - u0) / grid_w, v0 + (j + 0.5) * (v1 - v0) / grid_h);
  return g;
}

void export_png(const UvMap& map, const std::string& path, bool apply_srgb) {
  require(map.channels == 3, "export_png: 3-channel maps only");
  Tensor chw({3, map.height, map.width});
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      for (int c = 0; c < 3; ++c) {
        real v = map.at(x, y, c);
        chw.at(c, y, x) = apply_srgb ? linear_to_srgb(v) : v;
      }
  write_png(path, to_image8(chw));
}

}  // namespace sprt::uvmap
