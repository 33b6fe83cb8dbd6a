// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/synthgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sprt/container.hpp"
#include "sprt/image.hpp"
#include "sprt/primitives.hpp"

namespace sprt::synthgen {

namespace fs = std::filesystem;

void ToySpec::validate() const {
  require(identities >= 1 && expressions >= 1 && cameras >= 1, "toy spec: counts must be >= 1");
  require(image_size >= 16 && map_size >= 16, "toy spec: degenerate resolutions");
  require(mesh_rings >= 8 && mesh_segments >= 8, "toy spec: mesh too coarse");
  require(id_dims >= 1 && expr_dims >= 1, "toy spec: basis dims must be >= 1");
}

Eigen::Vector3d background_color() { return {1.0, 1.0, 1.0}; }

namespace {

constexpr real kFaceBandLo = 0.02, kFaceBandHi = 0.46;
constexpr real kHairBandLo = 0.54, kHairBandHi = 0.98;

/// Smooth low-order direction field used for identity bases.
real smooth_field(const Eigen::Vector3d& d, const std::vector<real>& c) {
  const real x = d.x(), y = d.y(), z = d.z();
  return c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * y + c[5] * y * z + c[6] * z * x +
         c[7] * (x * x - y * y) + c[8] * (3 * z * z - 1);
}

/// Modified Gram-Schmidt over flattened [3V, D] columns, then rescale every
/// column to the requested per-vertex RMS displacement.
void orthogonalize_basis(Tensor& basis, real target_rms) {
  const int64_t v = basis.dim(0);
  const int64_t d = basis.dim(2);
  const int64_t rows = v * 3;
  auto col = [&](int64_t k, int64_t r) -> real& {
    return basis.data[static_cast<size_t>(r * d + k)];
  };
  for (int64_t k = 0; k < d; ++k) {
    for (int64_t j = 0; j < k; ++j) {
      real dot = 0, nj = 0;
      for (int64_t r = 0; r < rows; ++r) {
        dot += col(k, r) * col(j, r);
        nj += col(j, r) * col(j, r);
      }
      const real coef = dot / nj;
      for (int64_t r = 0; r < rows; ++r) col(k, r) -= coef * col(j, r);
    }
    real norm = 0;
    for (int64_t r = 0; r < rows; ++r) norm += col(k, r) * col(k, r);
    norm = std::sqrt(norm);
    require(norm > 1e-12, "toy model: degenerate basis column");
    const real want = target_rms * std::sqrt(static_cast<real>(rows));
    for (int64_t r = 0; r < rows; ++r) col(k, r) *= want / norm;
  }
}

struct MeshTopo {
  int rings, segments, hair_ring;
  std::vector<Eigen::Vector3d> verts;        // unit sphere
  std::vector<std::array<int, 3>> faces;
  std::vector<real> polar, azimuth;          // per vertex
};

MeshTopo sphere_mesh(int rings, int segments, int hair_ring) {
  MeshTopo m;
  m.rings = rings;
  m.segments = segments;
  m.hair_ring = hair_ring;
  // vertex 0 = top pole, then (rings-1) rings of `segments`, last = bottom pole
  m.verts.emplace_back(0, 1, 0);
  m.polar.push_back(0);
  m.azimuth.push_back(0);
  for (int r = 1; r < rings; ++r) {
    const real p = M_PI * r / rings;
    for (int s = 0; s < segments; ++s) {
      const real a = 2.0 * M_PI * s / segments;
      m.verts.emplace_back(std::sin(p) * std::cos(a), std::cos(p), std::sin(p) * std::sin(a));
      m.polar.push_back(p);
      m.azimuth.push_back(a);
    }
  }
  m.verts.emplace_back(0, -1, 0);
  m.polar.push_back(M_PI);
  m.azimuth.push_back(0);

  auto ring_vert = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) m.faces.push_back({0, ring_vert(1, s + 1), ring_vert(1, s)});
  for (int r = 1; r < rings - 1; ++r)
    for (int s = 0; s < segments; ++s) {
      const int a = ring_vert(r, s), b = ring_vert(r, s + 1);
      const int c = ring_vert(r + 1, s), d = ring_vert(r + 1, s + 1);
      m.faces.push_back({a, b, c});
      m.faces.push_back({b, d, c});
    }
  const int bottom = static_cast<int>(m.verts.size()) - 1;
  for (int s = 0; s < segments; ++s)
    m.faces.push_back({ring_vert(rings - 1, s), ring_vert(rings - 1, s + 1), bottom});
  return m;
}

}  // namespace

geometry::MorphableModel make_toy_model(const ToySpec& spec) {
  spec.validate();
  Rng master(spec.seed);
  Rng rng_id = master.fork(1);
  Rng rng_expr = master.fork(2);

  const int hair_ring = std::max(2, static_cast<int>(std::lround(spec.mesh_rings * 0.36)));
  MeshTopo topo = sphere_mesh(spec.mesh_rings, spec.mesh_segments, hair_ring);
  const int v = static_cast<int>(topo.verts.size());
  const real p_hair = M_PI * hair_ring / spec.mesh_rings;

  geometry::MorphableModel model;
  model.mean_shape = Tensor({v, 3});
  for (int i = 0; i < v; ++i) {
    // Mild ellipsoid: a head is taller than wide.
    const Eigen::Vector3d& d = topo.verts[static_cast<size_t>(i)];
    model.mean_shape.at(i, 0) = 0.85 * d.x();
    model.mean_shape.at(i, 1) = 1.0 * d.y();
    model.mean_shape.at(i, 2) = 0.9 * d.z();
  }

  model.basis_id = Tensor({v, 3, spec.id_dims});
  for (int k = 0; k < spec.id_dims; ++k) {
    std::vector<real> coeffs(9);
    for (real& c : coeffs) c = rng_id.normal();
    for (int i = 0; i < v; ++i) {
      const Eigen::Vector3d& d = topo.verts[static_cast<size_t>(i)];
      const real f = smooth_field(d, coeffs);
      for (int a = 0; a < 3; ++a) model.basis_id.at(i, a, k) = f * d(a);
    }
  }
  orthogonalize_basis(model.basis_id, 0.05);

  model.basis_expr = Tensor({v, 3, spec.expr_dims});
  // Localized bumps: centers around the lower front (jaw/mouth/cheeks/brows).
  const std::vector<Eigen::Vector3d> centers = {
      Eigen::Vector3d(0, -0.75, 0.65),   // jaw
      Eigen::Vector3d(0, -0.25, 0.95),   // mouth
      Eigen::Vector3d(0.6, 0.35, 0.7),   // brow right
      Eigen::Vector3d(-0.6, 0.35, 0.7),  // brow left
      Eigen::Vector3d(0.8, -0.2, 0.55),  // cheek right
      Eigen::Vector3d(-0.8, -0.2, 0.55), // cheek left
  };
  for (int k = 0; k < spec.expr_dims; ++k) {
    const Eigen::Vector3d center =
        (k < static_cast<int>(centers.size()) ? centers[static_cast<size_t>(k)]
                                              : Eigen::Vector3d(rng_expr.normal(), rng_expr.normal(),
                                                                std::abs(rng_expr.normal())))
            .normalized();
    const real width = 0.35 + 0.1 * rng_expr.uniform();
    Eigen::Vector3d dir(rng_expr.normal(), rng_expr.normal(), rng_expr.normal());
    dir = (0.6 * center + 0.4 * dir.normalized()).normalized();
    for (int i = 0; i < v; ++i) {
      const Eigen::Vector3d& d = topo.verts[static_cast<size_t>(i)];
      const real angle = std::acos(std::clamp(d.dot(center), -1.0, 1.0));
      const real mask = std::exp(-(angle * angle) / (width * width));
      for (int a = 0; a < 3; ++a) model.basis_expr.at(i, a, k) = mask * dir(a);
    }
  }
  orthogonalize_basis(model.basis_expr, 0.04);

  // Two joints: a fixed root and a neck pivot below the head; weights blend
  // smoothly with height.
  model.joints.resize(2);
  model.joints[1].translation = Eigen::Vector3d(0, -1.2, 0);
  model.skin_weights = Tensor({v, 2});
  for (int i = 0; i < v; ++i) {
    const real y = model.mean_shape.at(i, 1);
    real w_neck = std::clamp((y + 1.0) / 1.6, 0.0, 1.0);
    w_neck = w_neck * w_neck * (3 - 2 * w_neck);  // smoothstep
    model.skin_weights.at(i, 0) = 1.0 - w_neck;
    model.skin_weights.at(i, 1) = w_neck;
  }

  // UV atlas: hair cap band on top of the square, face band below, with a
  // gap so bilinear lookups never mix regions. Faces never straddle the cap
  // boundary because it sits exactly on a ring.
  model.faces = topo.faces;
  model.face_uvs.resize(topo.faces.size());
  for (size_t f = 0; f < topo.faces.size(); ++f) {
    const auto& face = topo.faces[f];
    real max_p = 0;
    for (int c : face) max_p = std::max(max_p, topo.polar[static_cast<size_t>(c)]);
    const bool hair = max_p <= p_hair + 1e-9;
    // Azimuth continuity across the seam: lift small azimuths by 2*pi.
    real az[3];
    real lo = 2 * M_PI, hi = 0;
    for (int c = 0; c < 3; ++c) {
      az[c] = topo.azimuth[static_cast<size_t>(face[static_cast<size_t>(c)])];
      const real p = topo.polar[static_cast<size_t>(face[static_cast<size_t>(c)])];
      if (p > 1e-9 && p < M_PI - 1e-9) {
        lo = std::min(lo, az[c]);
        hi = std::max(hi, az[c]);
      }
    }
    const bool seam = hi - lo > M_PI;
    for (int c = 0; c < 3; ++c) {
      const int vi = face[static_cast<size_t>(c)];
      const real p = topo.polar[static_cast<size_t>(vi)];
      real a = az[c];
      const bool pole = p <= 1e-9 || p >= M_PI - 1e-9;
      if (pole) a = seam ? (lo + (hi + 2 * M_PI - lo) * 0.5) : 0.5 * (lo + hi);
      else if (seam && a < M_PI) a += 2 * M_PI;
      const real u = std::clamp(a / (2 * M_PI), 0.0, 1.0);
      real vv;
      if (hair) {
        vv = kHairBandLo + (kHairBandHi - kHairBandLo) * (p / p_hair);
      } else {
        vv = kFaceBandLo + (kFaceBandHi - kFaceBandLo) * ((p - p_hair) / (M_PI - p_hair));
      }
      model.face_uvs[f][static_cast<size_t>(c)] = Eigen::Vector2d(u, std::clamp(vv, 0.0, 1.0));
    }
  }
  model.uv_regions["face"] = Eigen::Vector4d(0.0, kFaceBandLo, 1.0, kFaceBandHi);
  model.uv_regions["hair"] = Eigen::Vector4d(0.0, kHairBandLo, 1.0, kHairBandHi);

  // Storage precision, so that regeneration from the saved bundle is exact.
  model.mean_shape.quantize_storage();
  model.basis_id.quantize_storage();
  model.basis_expr.quantize_storage();
  model.skin_weights.quantize_storage();
  // Re-normalize weight rows after rounding.
  for (int i = 0; i < v; ++i) {
    const real sum = model.skin_weights.at(i, 0) + model.skin_weights.at(i, 1);
    model.skin_weights.at(i, 0) /= sum;
    model.skin_weights.at(i, 1) /= sum;
  }
  for (auto& fu : model.face_uvs)
    for (auto& uv : fu)
      uv = Eigen::Vector2d(to_storage_precision(uv.x()), to_storage_precision(uv.y()));
  model.validate();
  return model;
}

geometry::MorphableModel make_toy_model(uint64_t seed) {
  ToySpec spec;
  spec.seed = seed;
  return make_toy_model(spec);
}

Tensor toy_vertex_colors(const geometry::MorphableModel& model, Rng& rng) {
  const int v = model.num_vertices();
  Tensor colors({v, 3});
  const Eigen::Vector3d skin(0.72 + 0.15 * rng.uniform(), 0.5 + 0.15 * rng.uniform(),
                             0.4 + 0.12 * rng.uniform());
  const Eigen::Vector3d hair(0.1 + 0.3 * rng.uniform(), 0.08 + 0.25 * rng.uniform(),
                             0.05 + 0.2 * rng.uniform());
  real freq[3], phase[3];
  for (int a = 0; a < 3; ++a) {
    freq[a] = 2.0 + 3.0 * rng.uniform();
    phase[a] = 2.0 * M_PI * rng.uniform();
  }
  // Hair occupies roughly the same polar cap as the hair UV band; undo the
  // ellipsoid scale to recover the sphere direction.
  for (int i = 0; i < v; ++i) {
    const Eigen::Vector3d p(model.mean_shape.at(i, 0), model.mean_shape.at(i, 1),
                            model.mean_shape.at(i, 2));
    const Eigen::Vector3d d =
        Eigen::Vector3d(p.x() / 0.85, p.y(), p.z() / 0.9).normalized();
    const real polar = std::acos(std::clamp(d.y(), -1.0, 1.0));
    const bool is_hair = polar < M_PI * 0.36 * 1.0001;
    const Eigen::Vector3d base = is_hair ? hair : skin;
    for (int a = 0; a < 3; ++a) {
      const real wave = 0.06 * std::sin(freq[a] * p(a) + phase[a]);
      colors.at(i, a) = std::clamp(base(a) + wave, 0.05, 0.95);
    }
  }
  colors.quantize_storage();
  return colors;
}

std::vector<splatter::Camera> toy_cameras(int count, int image_size) {
  require(count >= 1, "toy cameras: count must be >= 1");
  std::vector<splatter::Camera> cams;
  cams.reserve(static_cast<size_t>(count));
  const real dist = 3.5;
  const real fov = 55.0 * M_PI / 180.0;
  const int front = std::max(1, count - count / 3);  // remainder on the upper hemisphere
  for (int i = 0; i < count; ++i) {
    Eigen::Vector3d eye;
    if (i < front) {
      // Front ring: azimuth fan around +z at eye level.
      const real spread = 100.0 * M_PI / 180.0;
      const real a = front == 1 ? 0.0 : -0.5 * spread + spread * i / (front - 1);
      eye = dist * Eigen::Vector3d(std::sin(a), 0.0, std::cos(a));
    } else {
      const int j = i - front;
      const int n_up = count - front;
      const real a = 2.0 * M_PI * j / std::max(1, n_up) + 0.4;
      const real elev = 40.0 * M_PI / 180.0;
      eye = dist * Eigen::Vector3d(std::cos(elev) * std::sin(a), std::sin(elev),
                                   std::cos(elev) * std::cos(a));
    }
    cams.push_back(splatter::Camera::look_at(eye, Eigen::Vector3d::Zero(),
                                             Eigen::Vector3d(0, 1, 0), fov, image_size,
                                             image_size, 0.1, 20.0));
  }
  // Storage rounding keeps saved rigs identical to the ones used here.
  for (auto& c : cams) {
    for (int r = 0; r < 3; ++r) {
      for (int cc = 0; cc < 3; ++cc) c.rotation(r, cc) = to_storage_precision(c.rotation(r, cc));
      c.translation(r) = to_storage_precision(c.translation(r));
    }
    c.fx = to_storage_precision(c.fx);
    c.fy = to_storage_precision(c.fy);
    c.cx = to_storage_precision(c.cx);
    c.cy = to_storage_precision(c.cy);
  }
  return cams;
}

GroundTruth render_ground_truth(const geometry::MorphableModel& model,
                                const Tensor& vertex_colors, const geometry::Coefficients& coeffs,
                                const splatter::Camera& cam) {
  const int v = model.num_vertices();
  require(vertex_colors.rank() == 2 && vertex_colors.dim(0) == v && vertex_colors.dim(1) == 3,
          "render_ground_truth: colors must be [V,3]");
  Tensor shaped = geometry::morph(model, coeffs);
  Tensor posed = geometry::apply_lbs(shaped, model, coeffs.pose);

  primitives::GaussianSet g = primitives::GaussianSet::sized(v);
  g.positions = posed;
  // Isotropic scales from neutral-identity nearest-neighbor spacing.
  Tensor neutral = geometry::morph_identity(model, coeffs.delta);
  for (int i = 0; i < v; ++i) {
    real best = std::numeric_limits<real>::infinity();
    for (int j = 0; j < v; ++j) {
      if (j == i) continue;
      real d2 = 0;
      for (int a = 0; a < 3; ++a) {
        const real d = neutral.at(i, a) - neutral.at(j, a);
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    const real dist = std::max(std::sqrt(best) * 0.75, primitives::kMinInitDistance);
    const real log_dist = to_storage_precision(std::log(dist));
    for (int a = 0; a < 3; ++a) g.log_scales.at(i, a) = log_dist;
    g.opacity_logits[i] = 2.9444389791664403;  // logit(0.95)
    // DC-only spherical harmonics reproducing the vertex color.
    for (int a = 0; a < 3; ++a)
      g.sh.at(i, 0, a) = to_storage_precision((vertex_colors.at(i, a) - 0.5) / 0.28209479177387814);
  }
  splatter::RenderResult r = splatter::rasterize(g, cam, background_color());
  return {std::move(r.image), std::move(r.alpha)};
}

namespace {

geometry::Coefficients sample_coefficients(const geometry::MorphableModel& model, Rng& rng_id,
                                           Rng& rng_expr, Rng& rng_pose, bool neutral_expr) {
  geometry::Coefficients c;
  c.delta.resize(static_cast<size_t>(model.id_dims()));
  for (real& x : c.delta) x = to_storage_precision(rng_id.normal());
  c.gamma.assign(static_cast<size_t>(model.expr_dims()), 0.0);
  if (!neutral_expr)
    for (real& x : c.gamma) x = to_storage_precision(0.8 * rng_expr.normal());
  c.pose = geometry::Pose::rest(model.num_joints());
  // Small global rotation; neck stays at rest so the default world transform
  // (global rigid only) reproduces the data exactly.
  const real yaw = 0.25 * (rng_pose.uniform() - 0.5);
  const real pitch = 0.15 * (rng_pose.uniform() - 0.5);
  Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  for (int r = 0; r < 3; ++r)
    for (int cc = 0; cc < 3; ++cc) rot(r, cc) = to_storage_precision(rot(r, cc));
  // Re-orthonormalize after rounding.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
  rot = svd.matrixU() * svd.matrixV().transpose();
  for (int r = 0; r < 3; ++r)
    for (int cc = 0; cc < 3; ++cc) rot(r, cc) = to_storage_precision(rot(r, cc));
  c.pose.global.rotation = rot;
  return c;
}

std::string zero_pad(int value, int width) {
  std::string s = std::to_string(value);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

void save_cameras(const std::vector<splatter::Camera>& cams, const std::string& path) {
  TensorContainer c;
  c.set_i64("count", {static_cast<int64_t>(cams.size())});
  for (size_t i = 0; i < cams.size(); ++i) {
    const auto& cam = cams[i];
    Tensor t({18});
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) t[r * 3 + cc] = cam.rotation(r, cc);
    for (int a = 0; a < 3; ++a) t[9 + a] = cam.translation(a);
    t[12] = cam.fx;
    t[13] = cam.fy;
    t[14] = cam.cx;
    t[15] = cam.cy;
    t[16] = cam.near_clip;
    t[17] = cam.far_clip;
    c.set_tensor("cam" + std::to_string(i), t);
    c.set_i64("cam" + std::to_string(i) + ".size",
              {static_cast<int64_t>(cam.width), static_cast<int64_t>(cam.height)});
  }
  c.save(path);
}

std::vector<splatter::Camera> load_cameras(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  const int64_t count = c.get_i64("count").at(0);
  std::vector<splatter::Camera> cams(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    Tensor t = c.get_tensor("cam" + std::to_string(i));
    auto size = c.get_i64("cam" + std::to_string(i) + ".size");
    auto& cam = cams[static_cast<size_t>(i)];
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) cam.rotation(r, cc) = t[r * 3 + cc];
    for (int a = 0; a < 3; ++a) cam.translation(a) = t[9 + a];
    cam.fx = t[12];
    cam.fy = t[13];
    cam.cx = t[14];
    cam.cy = t[15];
    cam.near_clip = t[16];
    cam.far_clip = t[17];
    cam.width = static_cast<int>(size.at(0));
    cam.height = static_cast<int>(size.at(1));
  }
  return cams;
}

void DatasetIndex::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["version"] = version;
  j["image_size"] = image_size;
  j["map_size"] = map_size;
  j["identities"] = identities;
  j["expressions"] = expressions;
  j["cameras"] = cameras;
  j["seed"] = seed;
  j["model"] = model_path;
  j["camera_rig"] = cameras_path;
  nlohmann::ordered_json samples_json = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    nlohmann::ordered_json sj;
    sj["id"] = s.identity;
    sj["expr"] = s.expression;
    sj["cam"] = s.camera;
    sj["image"] = s.image;
    sj["mask"] = s.mask;
    sj["maps"] = s.maps;
    sj["coeffs"] = s.coeffs;
    samples_json.push_back(sj);
  }
  j["samples"] = samples_json;
  std::ofstream f(path);
  if (!f) throw data_error("dataset index: cannot write '" + path + "'");
  f << j.dump(1) << "\n";
}

DatasetIndex DatasetIndex::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("dataset index: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("dataset index: bad JSON: ") + e.what());
  }
  DatasetIndex idx;
  idx.root = fs::path(path).parent_path().string();
  idx.version = j.at("version");
  if (idx.version != 1) throw data_error("dataset index: unsupported version");
  idx.image_size = j.at("image_size");
  idx.map_size = j.at("map_size");
  idx.identities = j.at("identities");
  idx.expressions = j.at("expressions");
  idx.cameras = j.at("cameras");
  idx.seed = j.at("seed");
  idx.model_path = j.at("model");
  idx.cameras_path = j.at("camera_rig");
  for (const auto& sj : j.at("samples")) {
    SampleRecord s;
    s.identity = sj.at("id");
    s.expression = sj.at("expr");
    s.camera = sj.at("cam");
    s.image = sj.at("image");
    s.mask = sj.at("mask");
    s.maps = sj.at("maps");
    s.coeffs = sj.at("coeffs");
    idx.samples.push_back(std::move(s));
  }
  return idx;
}

DatasetIndex DatasetIndex::filter(const std::function<bool(const SampleRecord&)>& keep) const {
  DatasetIndex out = *this;
  out.samples.clear();
  for (const auto& s : samples)
    if (keep(s)) out.samples.push_back(s);
  return out;
}

DatasetIndex generate(const ToySpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw data_error("generate: cannot create output directory '" + out_dir + "'");
  {  // fail fast when the directory is not writable
    std::ofstream probe(fs::path(out_dir) / ".write_probe");
    if (!probe) throw data_error("generate: output directory not writable: '" + out_dir + "'");
  }
  fs::remove(fs::path(out_dir) / ".write_probe");

  geometry::MorphableModel model = make_toy_model(spec);
  const std::string model_rel = "model.bin";
  model.save((fs::path(out_dir) / model_rel).string());

  std::vector<splatter::Camera> cams = toy_cameras(spec.cameras, spec.image_size);
  const std::string cams_rel = "cameras.bin";
  save_cameras(cams, (fs::path(out_dir) / cams_rel).string());

  DatasetIndex idx;
  idx.root = out_dir;
  idx.image_size = spec.image_size;
  idx.map_size = spec.map_size;
  idx.identities = spec.identities;
  idx.expressions = spec.expressions;
  idx.cameras = spec.cameras;
  idx.seed = spec.seed;
  idx.model_path = model_rel;
  idx.cameras_path = cams_rel;

  Rng master(spec.seed);
  Rng rng_tex = master.fork(10);
  Rng rng_delta = master.fork(11);
  Rng rng_gamma = master.fork(12);
  Rng rng_pose = master.fork(13);

  for (int id = 0; id < spec.identities; ++id) {
    const std::string id_dir = "id_" + zero_pad(id, 3);
    fs::create_directories(fs::path(out_dir) / id_dir);
    Tensor colors = toy_vertex_colors(model, rng_tex);
    {
      TensorContainer c;
      c.set_tensor("vertex_colors", colors);
      c.save((fs::path(out_dir) / id_dir / "colors.bin").string());
    }
    // One identity delta per subject; expressions share it.
    std::vector<real> delta(static_cast<size_t>(model.id_dims()));
    for (real& x : delta) x = to_storage_precision(rng_delta.normal());

    uvmap::UvMap x_tex = uvmap::rasterize_uv(model, colors, spec.map_size, spec.map_size);
    uvmap::UvMap x_verts = uvmap::rasterize_uv(model, geometry::morph_identity(model, delta),
                                               spec.map_size, spec.map_size);

    for (int ex = 0; ex < spec.expressions; ++ex) {
      const std::string expr_dir = id_dir + "/expr_" + zero_pad(ex, 2);
      fs::create_directories(fs::path(out_dir) / expr_dir);

      geometry::Coefficients coeffs =
          sample_coefficients(model, rng_delta, rng_gamma, rng_pose, ex == 0);
      coeffs.delta = delta;  // identity fixed per subject

      uvmap::UvMap x_exp = uvmap::rasterize_uv(model, geometry::expression_offsets(model, coeffs.gamma),
                                               spec.map_size, spec.map_size);
      {
        TensorContainer c;
        c.set_tensor("x_tex", x_tex.data);
        c.set_u8("x_tex.validity", x_tex.validity);
        c.set_tensor("x_verts", x_verts.data);
        c.set_u8("x_verts.validity", x_verts.validity);
        c.set_tensor("x_exp", x_exp.data);
        c.set_u8("x_exp.validity", x_exp.validity);
        c.save((fs::path(out_dir) / expr_dir / "maps.bin").string());
      }
      {
        TensorContainer c;
        Tensor dt({static_cast<int64_t>(coeffs.delta.size())}, coeffs.delta);
        Tensor gt({static_cast<int64_t>(coeffs.gamma.size())}, coeffs.gamma);
        c.set_tensor("delta", dt);
        c.set_tensor("gamma", gt);
        c.set_tensor("pose.global", geometry::rigid_to_tensor(coeffs.pose.global));
        for (size_t ji = 0; ji < coeffs.pose.joint.size(); ++ji)
          c.set_tensor("pose.joint" + std::to_string(ji),
                       geometry::rigid_to_tensor(coeffs.pose.joint[ji]));
        c.save((fs::path(out_dir) / expr_dir / "coeffs.bin").string());
      }

      for (int cam_i = 0; cam_i < spec.cameras; ++cam_i) {
        GroundTruth gt = render_ground_truth(model, colors, coeffs, cams[static_cast<size_t>(cam_i)]);
        SampleRecord rec;
        rec.identity = id;
        rec.expression = ex;
        rec.camera = cam_i;
        rec.image = expr_dir + "/cam_" + std::to_string(cam_i) + ".png";
        rec.mask = expr_dir + "/mask_" + std::to_string(cam_i) + ".png";
        rec.maps = expr_dir + "/maps.bin";
        rec.coeffs = expr_dir + "/coeffs.bin";
        write_png((fs::path(out_dir) / rec.image).string(), to_image8(gt.image));
        Tensor alpha_chw({1, spec.image_size, spec.image_size}, gt.alpha.data);
        write_png((fs::path(out_dir) / rec.mask).string(), to_image8(alpha_chw));
        idx.samples.push_back(std::move(rec));
      }
    }
  }
  idx.save((fs::path(out_dir) / "index.json").string());
  return idx;
}

std::pair<DatasetIndex, DatasetIndex> holdout_split(const DatasetIndex& index, real fraction,
                                                    uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, "holdout_split: fraction must be in [0,1)");
  std::vector<size_t> order(index.samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(order[i - 1], order[j]);
  }
  const size_t test_count = static_cast<size_t>(std::floor(fraction * order.size()));
  DatasetIndex train = index, test = index;
  train.samples.clear();
  test.samples.clear();
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& s = index.samples[order[i]];
    if (i < test_count) test.samples.push_back(s);
    else train.samples.push_back(s);
  }
  return {train, test};
}

Sample load_sample(const DatasetIndex& index, const SampleRecord& rec) {
  Sample s;
  TensorContainer maps = TensorContainer::load((fs::path(index.root) / rec.maps).string());
  auto unpack = [&](const char* name) {
    uvmap::UvMap m;
    m.data = maps.get_tensor(name);
    m.height = static_cast<int>(m.data.dim(0));
    m.width = static_cast<int>(m.data.dim(1));
    m.channels = static_cast<int>(m.data.dim(2));
    m.validity = maps.get_u8(std::string(name) + ".validity");
    return m;
  };
  s.x_tex = unpack("x_tex");
  s.x_verts = unpack("x_verts");
  s.x_exp = unpack("x_exp");

  Image8 img = read_png((fs::path(index.root) / rec.image).string());
  s.image = to_tensor(img);
  Image8 mask = read_png((fs::path(index.root) / rec.mask).string());
  Tensor mask_chw = to_tensor(mask);
  s.mask = Tensor({mask.height, mask.width}, std::vector<real>(mask_chw.data.begin(),
                                                               mask_chw.data.begin() +
                                                                   mask.height * mask.width));

  TensorContainer cf = TensorContainer::load((fs::path(index.root) / rec.coeffs).string());
  s.coeffs.delta = cf.get_tensor("delta").data;
  s.coeffs.gamma = cf.get_tensor("gamma").data;
  s.coeffs.pose.global = geometry::rigid_from_tensor(cf.get_tensor("pose.global"));
  for (int ji = 0;; ++ji) {
    const std::string key = "pose.joint" + std::to_string(ji);
    if (!cf.contains(key)) break;
    s.coeffs.pose.joint.push_back(geometry::rigid_from_tensor(cf.get_tensor(key)));
  }
  const auto cams = load_cameras((fs::path(index.root) / index.cameras_path).string());
  require(rec.camera >= 0 && rec.camera < static_cast<int>(cams.size()),
          "load_sample: camera id out of range");
  s.camera = cams[static_cast<size_t>(rec.camera)];
  return s;
}

}  // namespace sprt::synthgen
