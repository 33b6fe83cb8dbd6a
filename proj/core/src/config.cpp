// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/config.hpp"

#include <fstream>
#include <sstream>

#include "sprt/toml.hpp"

namespace sprt {

RunConfig RunConfig::from_text(const std::string& text) {
  toml::Reader r(toml::parse(text));
  RunConfig c;

  c.threads = r.get_int("threads", c.threads);

  auto& m = c.model;
  m.map_size = r.get_int("model.map_size", m.map_size);
  m.latent_size = r.get_int("model.latent_size", m.latent_size);
  m.n_id = r.get_int("model.n_id", m.n_id);
  m.n_expr = r.get_int("model.n_expr", m.n_expr);
  m.codebook_size = r.get_int("model.codebook_size", m.codebook_size);
  m.feature_dim = r.get_int("model.feature_dim", m.feature_dim);
  m.enc_widths = r.get_int_array("model.enc_widths", m.enc_widths);
  m.dec_widths = r.get_int_array("model.dec_widths", m.dec_widths);
  m.reg_width = r.get_int("model.reg_width", m.reg_width);
  m.face_grid = r.get_int("model.face_grid", m.face_grid);
  m.hair_grid = r.get_int("model.hair_grid", m.hair_grid);
  m.vq_enabled = r.get_bool("model.vq_enabled", m.vq_enabled);
  m.beta_commit = r.get_real("model.beta_commit", m.beta_commit);
  m.feat_half_res = r.get_bool("model.feat_half_res", m.feat_half_res);
  m.recipe = r.get_string("model.recipe", m.recipe);

  auto read_weights = [&r](const std::string& prefix, objectives::LossWeights w) {
    w.l1 = r.get_real(prefix + ".l1", w.l1);
    w.ssim = r.get_real(prefix + ".ssim", w.ssim);
    w.perceptual = r.get_real(prefix + ".perceptual", w.perceptual);
    w.geometric = r.get_real(prefix + ".geometric", w.geometric);
    w.pos_reg = r.get_real(prefix + ".pos_reg", w.pos_reg);
    w.scale_reg = r.get_real(prefix + ".scale_reg", w.scale_reg);
    w.opacity_reg = r.get_real(prefix + ".opacity_reg", w.opacity_reg);
    w.shfc_reg = r.get_real(prefix + ".shfc_reg", w.shfc_reg);
    w.id_weight = r.get_real(prefix + ".id_weight", w.id_weight);
    w.arc_weight = r.get_real(prefix + ".arc_weight", w.arc_weight);
    return w;
  };

  auto& t = c.train;
  t.iterations = r.get_int("train.iterations", t.iterations);
  t.batch_size = r.get_int("train.batch_size", t.batch_size);
  t.base_lr = r.get_real("train.base_lr", t.base_lr);
  t.milestones = r.get_int_array("train.milestones", t.milestones);
  t.decay = r.get_real("train.decay", t.decay);
  t.checkpoint_every = r.get_int("train.checkpoint_every", t.checkpoint_every);
  t.log_every = r.get_int("train.log_every", t.log_every);
  t.seed = static_cast<uint64_t>(r.get_i64("train.seed", static_cast<int64_t>(t.seed)));
  t.weights = read_weights("train.weights", t.weights);

  auto& inv = c.inversion;
  inv.stage1_lr = r.get_real("inversion.stage1_lr", inv.stage1_lr);
  inv.stage2_lr = r.get_real("inversion.stage2_lr", inv.stage2_lr);
  inv.scale_factor = r.get_int("inversion.scale_factor", inv.scale_factor);
  inv.warmup = r.get_int("inversion.warmup", inv.warmup);
  inv.ema = r.get_real("inversion.ema", inv.ema);
  inv.patience = r.get_int("inversion.patience", inv.patience);
  inv.check_every = r.get_int("inversion.check_every", inv.check_every);
  inv.tol = r.get_real("inversion.tol", inv.tol);
  inv.restore_best = r.get_bool("inversion.restore_best", inv.restore_best);
  inv.use_mask = r.get_bool("inversion.use_mask", inv.use_mask);
  inv.seed = static_cast<uint64_t>(r.get_i64("inversion.seed", static_cast<int64_t>(inv.seed)));
  inv.weights = read_weights("inversion.weights", inv.weights);

  auto& d = c.dataset;
  d.identities = r.get_int("dataset.identities", d.identities);
  d.expressions = r.get_int("dataset.expressions", d.expressions);
  d.cameras = r.get_int("dataset.cameras", d.cameras);
  d.image_size = r.get_int("dataset.image_size", d.image_size);
  d.map_size = r.get_int("dataset.map_size", d.map_size);
  d.seed = static_cast<uint64_t>(r.get_i64("dataset.seed", static_cast<int64_t>(d.seed)));
  d.mesh_rings = r.get_int("dataset.mesh_rings", d.mesh_rings);
  d.mesh_segments = r.get_int("dataset.mesh_segments", d.mesh_segments);
  d.id_dims = r.get_int("dataset.id_dims", d.id_dims);
  d.expr_dims = r.get_int("dataset.expr_dims", d.expr_dims);

  auto& rs = c.renderer;
  rs.tile_size = r.get_int("renderer.tile_size", rs.tile_size);
  rs.alpha_cap = r.get_real("renderer.alpha_cap", rs.alpha_cap);
  rs.alpha_skip = r.get_real("renderer.alpha_skip", rs.alpha_skip);
  rs.transmittance_cutoff =
      r.get_real("renderer.transmittance_cutoff", rs.transmittance_cutoff);
  rs.covariance_floor = r.get_real("renderer.covariance_floor", rs.covariance_floor);
  rs.cull_guard_sigmas = r.get_real("renderer.cull_guard_sigmas", rs.cull_guard_sigmas);

  r.reject_unknown();
  c.model.validate();
  c.train.validate();
  c.inversion.validate();
  c.dataset.validate();
  if (c.dataset.map_size != c.model.map_size)
    throw config_error("config: dataset.map_size must match model.map_size");
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

}  // namespace sprt
