// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sprt/autodiff.hpp"
#include "sprt/container.hpp"
#include "sprt/graph_ops.hpp"
#include "sprt/uvmap.hpp"

namespace sprt::prior {

/// Architecture knobs. The residual-block recipe itself is fixed (see
/// docs/architecture.md) and tagged by `recipe`, which is stored in every
/// checkpoint; loading refuses mismatched configs.
struct PriorConfig {
  int map_size = 64;      // parameter map resolution (square)
  int latent_size = 8;    // latent grid resolution (square)
  int n_id = 64;          // identity code dimension
  int n_expr = 64;        // expression code dimension
  int codebook_size = 256;
  int feature_dim = 32;   // F
  std::vector<int> enc_widths = {16, 24, 32};
  std::vector<int> dec_widths = {32, 24, 16};
  int reg_width = 16;
  int face_grid = 32;     // face sampling grid is face_grid^2
  int hair_grid = 16;
  bool vq_enabled = true;
  real beta_commit = 0.25;
  bool feat_half_res = false;  // decode features at half resolution, sample up
  std::string recipe = "res-silu-v1";

  void validate() const;
  std::string to_json() const;
  static PriorConfig from_json(const std::string& json);
  bool operator==(const PriorConfig& o) const;
};

/// Node ids produced by one forward build on a tape.
struct QuantizeNodes {
  int z_rows = -1;         // [h*w, n]
  int quantized_chw = -1;  // [n, h, w], straight-through values
  int codebook_loss = -1;
  int commitment_loss = -1;
  std::vector<int> indices;
};

struct DecodedMaps {
  int feat = -1;   // [F, H', W'] (H' = map or map/2)
  int tex = -1;    // [3, H, W]
  int verts = -1;  // [3, H, W]
  int expr = -1;   // [3, H, W]
};

struct PartNodes {
  const uvmap::SampleGrid* grid = nullptr;
  int base_positions = -1;   // [m,3]
  int base_log_dist = -1;    // [m]
  int base_quats = -1;       // [m,4]
  int features = -1;         // [m,F]
  int sh = -1;               // [m,48]
  int dpos = -1, drot = -1, dlog_scale = -1, dlogit = -1;
  int positions = -1, quats = -1, log_scales = -1, logits = -1;  // after offsets
};

struct ForwardNodes {
  int z_id = -1, z_expr = -1;  // encoder outputs [n, h, w]
  QuantizeNodes q_id, q_expr;
  DecodedMaps maps;
  int phi_map = -1;  // verts + expr
  PartNodes face, hair;
  // Concatenated primitives (3DMM space, before any world transform).
  int positions = -1, quats = -1, log_scales = -1, logits = -1, sh = -1;
  int q_loss = -1;  // codebook + beta*commitment over both books
};

/// Maps a parameter name to its tape node for one forward build.
using TapeParams = std::map<std::string, int>;

class PriorModel {
 public:
  static PriorModel init(const PriorConfig& cfg, uint64_t seed);

  const PriorConfig& config() const { return cfg_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::vector<std::string> param_names() const;

  /// Pushes every parameter onto the tape; `trainable(name)` decides whether
  /// a tensor becomes a differentiable leaf or a constant.
  TapeParams push(ad::Tape& t,
                  const std::function<bool(const std::string&)>& trainable) const;

  // Graph builders. All take the TapeParams of the same tape.
  int encode_id(ad::Tape& t, const TapeParams& p, int x_tex, int x_verts) const;
  int encode_expr(ad::Tape& t, const TapeParams& p, int x_exp) const;
  QuantizeNodes quantize(ad::Tape& t, const TapeParams& p, int z_chw, const std::string& book);
  DecodedMaps decode(ad::Tape& t, const TapeParams& p, int zq_id_chw, int zq_expr_chw) const;
  PartNodes regress_part(ad::Tape& t, const TapeParams& p, int feat_map, int phi_map,
                         const uvmap::SampleGrid& grid) const;

  /// encode -> quantize -> decode -> sample -> init -> regress -> offsets.
  ForwardNodes forward(ad::Tape& t, const TapeParams& p, int x_tex, int x_verts, int x_exp,
                       const uvmap::SampleGrid& face_grid, const uvmap::SampleGrid& hair_grid);

  /// Codebook usage counters (bumped by quantize).
  const std::vector<int64_t>& usage(const std::string& book) const;
  void reset_usage();

  void serialize_into(TensorContainer& c) const;
  static PriorModel deserialize_from(const TensorContainer& c);
  /// Hard error when the stored architecture config differs from `expect`.
  static PriorModel deserialize_expect(const TensorContainer& c, const PriorConfig& expect);

  /// Byte checksum over a named subset of parameters (stage-freeze asserts).
  uint64_t checksum(const std::function<bool(const std::string&)>& select) const;

 private:
  PriorConfig cfg_;
  std::map<std::string, Tensor> params_;
  std::vector<int64_t> usage_id_, usage_expr_;
};

/// Standard parameter groups for the two inversion stages.
bool is_encoder_id_param(const std::string& name);
bool is_stage2_param(const std::string& name);  // decoders + regressors

}  // namespace sprt::prior
