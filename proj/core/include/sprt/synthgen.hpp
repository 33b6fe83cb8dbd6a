// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sprt/geometry.hpp"
#include "sprt/rng.hpp"
#include "sprt/splatter.hpp"
#include "sprt/uvmap.hpp"

namespace sprt::synthgen {

/// Knobs for the procedural toy dataset. Fixing `seed` makes the whole
/// generated tree bit-reproducible.
struct ToySpec {
  int identities = 32;
  int expressions = 8;  // index 0 is always neutral
  int cameras = 6;
  int image_size = 128;
  int map_size = 64;
  uint64_t seed = 1234;
  int mesh_rings = 30;
  int mesh_segments = 48;
  int id_dims = 8;
  int expr_dims = 6;

  void validate() const;
};

struct SampleRecord {
  int identity = 0, expression = 0, camera = 0;
  std::string image, mask, maps, coeffs;  // paths relative to root
};

struct DatasetIndex {
  std::string root;
  int version = 1;
  int image_size = 0, map_size = 0;
  int identities = 0, expressions = 0, cameras = 0;
  uint64_t seed = 0;
  std::string model_path;      // morphable model bundle
  std::string cameras_path;    // camera rig container
  std::vector<SampleRecord> samples;

  void save(const std::string& path) const;
  static DatasetIndex load(const std::string& path);

  DatasetIndex filter(const std::function<bool(const SampleRecord&)>& keep) const;
};

/// Sphere-based head: smooth random radial identity bases, localized
/// expression bases (both orthogonalized), a two-band UV atlas ("face" lower
/// band, "hair" cap band) and a root+neck joint pair. All tensors are rounded
/// to storage precision so regeneration from saved files is exact.
geometry::MorphableModel make_toy_model(const ToySpec& spec);
geometry::MorphableModel make_toy_model(uint64_t seed);

/// Per-identity procedural vertex colors (skin tone + hair tint), in [0,1].
Tensor toy_vertex_colors(const geometry::MorphableModel& model, Rng& rng);

/// Camera rig: front ring plus upper-hemisphere views, all looking at the
/// head center.
std::vector<splatter::Camera> toy_cameras(int count, int image_size);

/// Ground-truth render rule: DC-colored Gaussians on the morphed, posed mesh
/// vertices over a white background.
struct GroundTruth {
  Tensor image;  // [3,H,W]
  Tensor alpha;  // [H,W]
};
GroundTruth render_ground_truth(const geometry::MorphableModel& model,
                                const Tensor& vertex_colors, const geometry::Coefficients& coeffs,
                                const splatter::Camera& cam);

/// Generate the full tree under out_dir and return (and save) the index.
DatasetIndex generate(const ToySpec& spec, const std::string& out_dir);

/// Seeded random split; fraction is the test share in [0,1).
std::pair<DatasetIndex, DatasetIndex> holdout_split(const DatasetIndex& index, real fraction,
                                                    uint64_t seed);

/// Loaded per-sample training inputs.
struct Sample {
  uvmap::UvMap x_tex, x_verts, x_exp;
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [H,W]
  geometry::Coefficients coeffs;
  splatter::Camera camera;
};
Sample load_sample(const DatasetIndex& index, const SampleRecord& rec);

std::vector<splatter::Camera> load_cameras(const std::string& path);
void save_cameras(const std::vector<splatter::Camera>& cams, const std::string& path);

/// White, matching the renderer default for masked-head data.
Eigen::Vector3d background_color();

}  // namespace sprt::synthgen
