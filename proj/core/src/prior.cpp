// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/prior.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sprt/nn.hpp"
#include "sprt/rng.hpp"

namespace sprt::prior {

namespace {

int log2_exact(int a, int b) {  // a / b must be a power of two; returns the exponent
  int n = 0;
  while (a > b) {
    require(a % 2 == 0, "config: map/latent sizes must differ by powers of two");
    a /= 2;
    ++n;
  }
  require(a == b, "config: latent size does not divide map size");
  return n;
}

}  // namespace

void PriorConfig::validate() const {
  require(map_size >= 8 && latent_size >= 1, "config: degenerate resolutions");
  require(feature_dim == 32 || feature_dim == 64 || feature_dim == 128,
          "config: feature_dim must be one of {32, 64, 128}");
  require(codebook_size >= 1, "config: empty codebook");
  require(n_id >= 1 && n_expr >= 1, "config: latent dims must be positive");
  const int downs = log2_exact(map_size, latent_size);
  require(static_cast<int>(enc_widths.size()) == downs,
          "config: enc_widths must have one entry per downsampling step");
  require(static_cast<int>(dec_widths.size()) == downs,
          "config: dec_widths must have one entry per upsampling step");
  require(!feat_half_res || downs >= 2, "config: feat_half_res needs at least two up blocks");
  require(face_grid >= 1 && hair_grid >= 1, "config: empty sampling grids");
  require(beta_commit >= 0, "config: negative commitment weight");
}

std::string PriorConfig::to_json() const {
  nlohmann::ordered_json j;
  j["map_size"] = map_size;
  j["latent_size"] = latent_size;
  j["n_id"] = n_id;
  j["n_expr"] = n_expr;
  j["codebook_size"] = codebook_size;
  j["feature_dim"] = feature_dim;
  j["enc_widths"] = enc_widths;
  j["dec_widths"] = dec_widths;
  j["reg_width"] = reg_width;
  j["face_grid"] = face_grid;
  j["hair_grid"] = hair_grid;
  j["vq_enabled"] = vq_enabled;
  j["beta_commit"] = beta_commit;
  j["feat_half_res"] = feat_half_res;
  j["recipe"] = recipe;
  return j.dump();
}

PriorConfig PriorConfig::from_json(const std::string& json) {
  auto j = nlohmann::json::parse(json);
  PriorConfig c;
  c.map_size = j.at("map_size");
  c.latent_size = j.at("latent_size");
  c.n_id = j.at("n_id");
  c.n_expr = j.at("n_expr");
  c.codebook_size = j.at("codebook_size");
  c.feature_dim = j.at("feature_dim");
  c.enc_widths = j.at("enc_widths").get<std::vector<int>>();
  c.dec_widths = j.at("dec_widths").get<std::vector<int>>();
  c.reg_width = j.at("reg_width");
  c.face_grid = j.at("face_grid");
  c.hair_grid = j.at("hair_grid");
  c.vq_enabled = j.at("vq_enabled");
  c.beta_commit = j.at("beta_commit");
  c.feat_half_res = j.at("feat_half_res");
  c.recipe = j.at("recipe");
  return c;
}

bool PriorConfig::operator==(const PriorConfig& o) const { return to_json() == o.to_json(); }

namespace {

struct ConvSpec {
  std::string name;
  int in = 0, out = 0, k = 3, stride = 1, pad = 1;
  bool zero_init = false;
};

void add_res_block(std::vector<ConvSpec>& v, const std::string& name, int ch) {
  v.push_back({name + ".c1", ch, ch, 3, 1, 1, false});
  v.push_back({name + ".c2", ch, ch, 3, 1, 1, false});
}

std::vector<ConvSpec> encoder_specs(const std::string& prefix, int in_ch,
                                    const std::vector<int>& widths, int out_dim) {
  std::vector<ConvSpec> v;
  v.push_back({prefix + ".stem", in_ch, widths[0], 3, 1, 1, false});
  const int n = static_cast<int>(widths.size());
  for (int i = 0; i < n; ++i) {
    const int from = widths[static_cast<size_t>(i)];
    const int to = widths[static_cast<size_t>(std::min(i + 1, n - 1))];
    v.push_back({prefix + ".down" + std::to_string(i), from, to, 3, 2, 1, false});
    add_res_block(v, prefix + ".res" + std::to_string(i), to);
  }
  v.push_back({prefix + ".head", widths[static_cast<size_t>(n - 1)], out_dim, 1, 1, 0, false});
  return v;
}

std::vector<ConvSpec> decoder_specs(const std::string& prefix, int in_ch,
                                    const std::vector<int>& widths, int out_ch, int n_up) {
  std::vector<ConvSpec> v;
  v.push_back({prefix + ".entry", in_ch, widths[0], 1, 1, 0, false});
  add_res_block(v, prefix + ".res_in", widths[0]);
  const int n = static_cast<int>(widths.size());
  for (int i = 0; i < n_up; ++i) {
    const int from = widths[static_cast<size_t>(std::max(i - 1, 0))];
    const int to = widths[static_cast<size_t>(std::min(i, n - 1))];
    v.push_back({prefix + ".up" + std::to_string(i), from, to, 3, 1, 1, false});
    add_res_block(v, prefix + ".res" + std::to_string(i), to);
  }
  const int last = widths[static_cast<size_t>(std::min(n_up - 1, n - 1))];
  v.push_back({prefix + ".head", last, out_ch, 3, 1, 1, false});
  return v;
}

std::vector<ConvSpec> regressor_specs(const std::string& prefix, int in_ch, int width,
                                      int out_ch) {
  std::vector<ConvSpec> v;
  v.push_back({prefix + ".entry", in_ch, width, 1, 1, 0, false});
  for (int i = 0; i < 4; ++i) add_res_block(v, prefix + ".res" + std::to_string(i), width);
  v.push_back({prefix + ".head", width, out_ch, 1, 1, 0, true});  // zero so initial offsets vanish
  return v;
}

std::vector<ConvSpec> all_specs(const PriorConfig& c) {
  const int n_up = static_cast<int>(c.dec_widths.size());
  std::vector<ConvSpec> v;
  auto extend = [&v](std::vector<ConvSpec> more) {
    v.insert(v.end(), more.begin(), more.end());
  };
  extend(encoder_specs("e_id", 6, c.enc_widths, c.n_id));
  extend(encoder_specs("e_expr", 3, c.enc_widths, c.n_expr));
  extend(decoder_specs("d_feat", c.n_id + c.n_expr, c.dec_widths, c.feature_dim,
                       c.feat_half_res ? n_up - 1 : n_up));
  extend(decoder_specs("d_id", c.n_id, c.dec_widths, 6, n_up));
  extend(decoder_specs("d_expr", c.n_expr, c.dec_widths, 3, n_up));
  for (const char* region : {"face", "hair"}) {
    extend(regressor_specs(std::string("r_color.") + region, c.feature_dim, c.reg_width, 48));
    extend(regressor_specs(std::string("r_gauss.") + region, c.feature_dim, c.reg_width, 10));
  }
  return v;
}

/// Shared forward helpers operating on tape nodes.
struct NetOps {
  ad::Tape& t;
  const TapeParams& p;

  int conv(const std::string& name, int x, int stride, int pad) const {
    return nn::conv2d(t, x, p.at(name + ".w"), p.at(name + ".b"), stride, pad);
  }
  int res(const std::string& name, int x) const {
    int h = t.silu(x);
    h = conv(name + ".c1", h, 1, 1);
    h = t.silu(h);
    h = conv(name + ".c2", h, 1, 1);
    return t.add(x, h);
  }
  int encoder(const std::string& prefix, int x, int n_down) const {
    int h = conv(prefix + ".stem", x, 1, 1);
    for (int i = 0; i < n_down; ++i) {
      h = conv(prefix + ".down" + std::to_string(i), t.silu(h), 2, 1);
      h = res(prefix + ".res" + std::to_string(i), h);
    }
    return conv(prefix + ".head", t.silu(h), 1, 0);
  }
  int decoder(const std::string& prefix, int x, int n_up) const {
    int h = conv(prefix + ".entry", x, 1, 0);
    h = res(prefix + ".res_in", h);
    for (int i = 0; i < n_up; ++i) {
      h = nn::upsample2x(t, h);
      h = conv(prefix + ".up" + std::to_string(i), t.silu(h), 1, 1);
      h = res(prefix + ".res" + std::to_string(i), h);
    }
    return conv(prefix + ".head", t.silu(h), 1, 1);
  }
  int regressor(const std::string& prefix, int x) const {
    int h = conv(prefix + ".entry", x, 1, 0);
    for (int i = 0; i < 4; ++i) h = res(prefix + ".res" + std::to_string(i), h);
    return conv(prefix + ".head", t.silu(h), 1, 0);
  }
};

}  // namespace

PriorModel PriorModel::init(const PriorConfig& cfg, uint64_t seed) {
  cfg.validate();
  PriorModel m;
  m.cfg_ = cfg;
  Rng rng(seed);
  for (const ConvSpec& s : all_specs(cfg)) {
    Tensor w({s.out, s.in, s.k, s.k});
    if (!s.zero_init) w = nn::conv_weight_init(rng, s.out, s.in, s.k, s.k);
    m.params_[s.name + ".w"] = std::move(w);
    m.params_[s.name + ".b"] = Tensor({s.out});
  }
  // Codebooks: spread entries wide enough to cover the encoder output range.
  for (const char* book : {"id", "expr"}) {
    const int dim = std::string(book) == "id" ? cfg.n_id : cfg.n_expr;
    Tensor cb({cfg.codebook_size, dim});
    for (real& v : cb.data) v = rng.normal(0.0, 0.5);
    m.params_[std::string("codebook.") + book] = std::move(cb);
  }
  m.usage_id_.assign(static_cast<size_t>(cfg.codebook_size), 0);
  m.usage_expr_.assign(static_cast<size_t>(cfg.codebook_size), 0);
  return m;
}

Tensor& PriorModel::param(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "prior: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& PriorModel::param(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "prior: unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> PriorModel::param_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

TapeParams PriorModel::push(ad::Tape& t,
                            const std::function<bool(const std::string&)>& trainable) const {
  TapeParams p;
  for (const auto& [name, tensor] : params_)
    p[name] = trainable(name) ? t.param(tensor) : t.constant(tensor);
  return p;
}

int PriorModel::encode_id(ad::Tape& t, const TapeParams& p, int x_tex, int x_verts) const {
  require(t.value(x_tex).dim(1) == cfg_.map_size && t.value(x_verts).dim(1) == cfg_.map_size,
          "encode_id: map resolution mismatch");
  require(t.value(x_tex).dim(0) == 3 && t.value(x_verts).dim(0) == 3,
          "encode_id: expected 3-channel maps");
  NetOps ops{t, p};
  return ops.encoder("e_id", t.concat_ch(x_tex, x_verts),
                     static_cast<int>(cfg_.enc_widths.size()));
}

int PriorModel::encode_expr(ad::Tape& t, const TapeParams& p, int x_exp) const {
  require(t.value(x_exp).dim(1) == cfg_.map_size && t.value(x_exp).dim(0) == 3,
          "encode_expr: map resolution mismatch");
  NetOps ops{t, p};
  return ops.encoder("e_expr", x_exp, static_cast<int>(cfg_.enc_widths.size()));
}

QuantizeNodes PriorModel::quantize(ad::Tape& t, const TapeParams& p, int z_chw,
                                   const std::string& book) {
  QuantizeNodes out;
  const int h = static_cast<int>(t.value(z_chw).dim(1));
  const int w = static_cast<int>(t.value(z_chw).dim(2));
  out.z_rows = t.chw_to_rows(z_chw);
  graph::VqResult vq =
      graph::vector_quantize(t, out.z_rows, p.at("codebook." + book), cfg_.vq_enabled);
  out.quantized_chw = t.rows_to_chw(vq.quantized, h, w);
  out.codebook_loss = vq.codebook_loss;
  out.commitment_loss = vq.commitment_loss;
  out.indices = vq.indices;
  auto& usage = book == "id" ? usage_id_ : usage_expr_;
  for (int idx : vq.indices) ++usage[static_cast<size_t>(idx)];
  return out;
}

DecodedMaps PriorModel::decode(ad::Tape& t, const TapeParams& p, int zq_id_chw,
                               int zq_expr_chw) const {
  NetOps ops{t, p};
  const int n_up = static_cast<int>(cfg_.dec_widths.size());
  DecodedMaps out;
  out.feat = ops.decoder("d_feat", t.concat_ch(zq_id_chw, zq_expr_chw),
                         cfg_.feat_half_res ? n_up - 1 : n_up);
  const int id_maps = ops.decoder("d_id", zq_id_chw, n_up);
  out.tex = t.slice_ch(id_maps, 0, 3);
  out.verts = t.slice_ch(id_maps, 3, 6);
  out.expr = ops.decoder("d_expr", zq_expr_chw, n_up);
  return out;
}

PartNodes PriorModel::regress_part(ad::Tape& t, const TapeParams& p, int feat_map, int phi_map,
                                   const uvmap::SampleGrid& grid) const {
  require(grid.region == "face" || grid.region == "hair", "regress_part: unknown region tag");
  NetOps ops{t, p};
  PartNodes part;
  part.grid = &grid;
  const int m = grid.size();

  part.base_positions = graph::bilinear_gather(t, phi_map, grid.uv);
  part.base_log_dist = graph::nn_log_distance(t, part.base_positions);
  part.base_quats = graph::tangent_frame_quats(t, phi_map, grid.uv);
  part.features = graph::bilinear_gather(t, feat_map, grid.uv);

  const int feat_grid = t.rows_to_chw(part.features, grid.grid_h, grid.grid_w);
  const int color_out = ops.regressor("r_color." + grid.region, feat_grid);
  part.sh = t.chw_to_rows(color_out);  // [m,48]
  const int gauss_out = ops.regressor("r_gauss." + grid.region, feat_grid);
  part.dpos = t.chw_to_rows(t.slice_ch(gauss_out, 0, 3));
  part.drot = t.chw_to_rows(t.slice_ch(gauss_out, 3, 6));
  part.dlog_scale = t.chw_to_rows(t.slice_ch(gauss_out, 6, 9));
  part.dlogit = t.reshape(t.chw_to_rows(t.slice_ch(gauss_out, 9, 10)), {m});

  part.positions = t.add(part.base_positions, part.dpos);
  part.log_scales = t.add(t.repeat_cols(part.base_log_dist, 3), part.dlog_scale);
  part.logits = t.add_const(part.dlogit, primitives::kInitOpacityLogit);
  part.quats = graph::compose_axis_angle(t, part.drot, part.base_quats);
  return part;
}

ForwardNodes PriorModel::forward(ad::Tape& t, const TapeParams& p, int x_tex, int x_verts,
                                 int x_exp, const uvmap::SampleGrid& face_grid,
                                 const uvmap::SampleGrid& hair_grid) {
  ForwardNodes f;
  f.z_id = encode_id(t, p, x_tex, x_verts);
  f.z_expr = encode_expr(t, p, x_exp);
  f.q_id = quantize(t, p, f.z_id, "id");
  f.q_expr = quantize(t, p, f.z_expr, "expr");
  f.maps = decode(t, p, f.q_id.quantized_chw, f.q_expr.quantized_chw);
  f.phi_map = t.add(f.maps.verts, f.maps.expr);
  f.face = regress_part(t, p, f.maps.feat, f.phi_map, face_grid);
  f.hair = regress_part(t, p, f.maps.feat, f.phi_map, hair_grid);

  f.positions = t.concat_rows(f.face.positions, f.hair.positions);
  f.quats = t.concat_rows(f.face.quats, f.hair.quats);
  f.log_scales = t.concat_rows(f.face.log_scales, f.hair.log_scales);
  const int m_total = face_grid.size() + hair_grid.size();
  f.logits = t.reshape(t.concat_rows(t.reshape(f.face.logits, {face_grid.size(), 1}),
                                     t.reshape(f.hair.logits, {hair_grid.size(), 1})),
                       {m_total});
  f.sh = t.concat_rows(f.face.sh, f.hair.sh);

  int q = t.add(f.q_id.codebook_loss, f.q_expr.codebook_loss);
  int commit = t.add(f.q_id.commitment_loss, f.q_expr.commitment_loss);
  f.q_loss = t.add(q, t.scale(commit, cfg_.beta_commit));
  return f;
}

const std::vector<int64_t>& PriorModel::usage(const std::string& book) const {
  return book == "id" ? usage_id_ : usage_expr_;
}

void PriorModel::reset_usage() {
  std::fill(usage_id_.begin(), usage_id_.end(), 0);
  std::fill(usage_expr_.begin(), usage_expr_.end(), 0);
}

void PriorModel::serialize_into(TensorContainer& c) const {
  c.set_string("__config__", cfg_.to_json());
  c.set_i64("__format__", {1});
  for (const auto& [name, tensor] : params_) c.set_tensor("param." + name, tensor);
  c.set_i64("usage.id", usage_id_);
  c.set_i64("usage.expr", usage_expr_);
}

PriorModel PriorModel::deserialize_from(const TensorContainer& c) {
  PriorModel m;
  m.cfg_ = PriorConfig::from_json(c.get_string("__config__"));
  m.cfg_.validate();
  for (const ConvSpec& s : all_specs(m.cfg_)) {
    m.params_[s.name + ".w"] = c.get_tensor("param." + s.name + ".w");
    m.params_[s.name + ".b"] = c.get_tensor("param." + s.name + ".b");
  }
  m.params_["codebook.id"] = c.get_tensor("param.codebook.id");
  m.params_["codebook.expr"] = c.get_tensor("param.codebook.expr");
  m.usage_id_ = c.get_i64("usage.id");
  m.usage_expr_ = c.get_i64("usage.expr");
  return m;
}

PriorModel PriorModel::deserialize_expect(const TensorContainer& c, const PriorConfig& expect) {
  const std::string stored = c.get_string("__config__");
  if (stored != expect.to_json())
    throw data_error("checkpoint: architecture config mismatch");
  return deserialize_from(c);
}

uint64_t PriorModel::checksum(const std::function<bool(const std::string&)>& select) const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& [name, tensor] : params_) {
    if (!select(name)) continue;
    for (real x : tensor.data) {
      uint64_t bits;
      static_assert(sizeof(bits) == sizeof(x));
      std::memcpy(&bits, &x, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

bool is_encoder_id_param(const std::string& name) { return name.rfind("e_id.", 0) == 0; }

bool is_stage2_param(const std::string& name) {
  for (const char* prefix : {"d_feat.", "d_id.", "d_expr.", "r_color.", "r_gauss."})
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace sprt::prior
