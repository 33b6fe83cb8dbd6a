// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "sprt/image.hpp"

namespace sprt::pipeline {

namespace fs = std::filesystem;

namespace {
splatter::Camera camera_from_json(const nlohmann::json& j);
geometry::Pose pose_from_json(const nlohmann::json& j, int num_joints);
}  // namespace

void TrainConfig::validate() const {
  require(iterations >= 1, "train config: iterations must be >= 1");
  require(batch_size >= 1, "train config: batch size must be >= 1");
  require(decay > 0.0 && decay <= 1.0, "train config: decay must be in (0,1]");
  require(checkpoint_every >= 1, "train config: checkpoint cadence must be >= 1");
}

void InversionConfig::validate() const {
  require(scale_factor >= 1, "inversion config: scale factor must be >= 1");
  require(warmup >= 0 && patience >= 1 && check_every >= 1, "inversion config: bad early stop");
  require(ema > 0.0 && ema < 1.0, "inversion config: ema coefficient in (0,1)");
}

void Adam::step(prior::PriorModel& model, const std::map<std::string, Tensor>& grads, real lr) {
  ++step_;
  const real bc1 = 1.0 - std::pow(beta1, static_cast<real>(step_));
  const real bc2 = 1.0 - std::pow(beta2, static_cast<real>(step_));
  for (const auto& [name, g] : grads) {
    Tensor& w = model.param(name);
    require(g.shape == w.shape, "adam: gradient shape mismatch for " + name);
    Slot& slot = slots_[name];
    if (slot.m.numel() == 0) {
      slot.m = Tensor(w.shape);
      slot.v = Tensor(w.shape);
    }
    for (int64_t i = 0; i < w.numel(); ++i) {
      slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
      slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
      const real m_hat = slot.m[i] / bc1;
      const real v_hat = slot.v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
    }
  }
}

void Adam::serialize_into(TensorContainer& c) const {
  c.set_i64("opt.step", {step_});
  for (const auto& [name, slot] : slots_) {
    c.set_tensor("opt.m." + name, slot.m);
    c.set_tensor("opt.v." + name, slot.v);
  }
}

void Adam::deserialize_from(const TensorContainer& c) {
  slots_.clear();
  step_ = c.get_i64("opt.step").at(0);
  for (const auto& name : c.names()) {
    if (name.rfind("opt.m.", 0) != 0) continue;
    const std::string param = name.substr(6);
    Slot slot;
    slot.m = c.get_tensor("opt.m." + param);
    slot.v = c.get_tensor("opt.v." + param);
    slots_[param] = std::move(slot);
  }
}

real lr_at(const TrainConfig& cfg, int step) {
  real lr = cfg.base_lr;
  for (int ms : cfg.milestones)
    if (step >= ms) lr *= cfg.decay;
  return lr;
}

std::pair<uvmap::SampleGrid, uvmap::SampleGrid> make_grids(
    const geometry::MorphableModel& bundle, const prior::PriorConfig& cfg) {
  auto face_it = bundle.uv_regions.find("face");
  auto hair_it = bundle.uv_regions.find("hair");
  require(face_it != bundle.uv_regions.end() && hair_it != bundle.uv_regions.end(),
          "make_grids: model bundle lacks face/hair region rectangles");
  const real margin = 2.0 / static_cast<real>(cfg.map_size);
  return {uvmap::make_sample_grid("face", face_it->second, cfg.face_grid, cfg.face_grid, margin),
          uvmap::make_sample_grid("hair", hair_it->second, cfg.hair_grid, cfg.hair_grid, margin)};
}

namespace {

Tensor mask_to_chw3(const Tensor& mask) {
  Tensor out({3, mask.dim(0), mask.dim(1)});
  for (int c = 0; c < 3; ++c)
    std::copy(mask.data.begin(), mask.data.end(),
              out.data.begin() + c * mask.numel());
  return out;
}

struct SampleLossNodes {
  int color_tex = -1, color_verts = -1, color_expr = -1, color_image = -1;
  int geom = -1, reg = -1, q = -1, total = -1;
  int render = -1;
};

/// The full training objective for one sample on one tape.
SampleLossNodes build_sample_loss(ad::Tape& t, prior::PriorModel& model,
                                  const prior::TapeParams& params,
                                  const synthgen::Sample& sample,
                                  const uvmap::SampleGrid& face_grid,
                                  const uvmap::SampleGrid& hair_grid,
                                  const objectives::LossWeights& w,
                                  const objectives::EmbeddingExtractor& extractor) {
  const int x_tex = t.constant(sample.x_tex.to_chw());
  const int x_verts = t.constant(sample.x_verts.to_chw());
  const int x_exp = t.constant(sample.x_exp.to_chw());
  const int target = t.constant(sample.image);

  prior::ForwardNodes f = model.forward(t, params, x_tex, x_verts, x_exp, face_grid, hair_grid);

  // World placement: global rigid transform only (neck identity in the data).
  const int world_pos = graph::rigid_points(t, f.positions, sample.coeffs.pose.global.rotation,
                                            sample.coeffs.pose.global.translation);
  const Eigen::Vector4d gq =
      primitives::rotation_to_quaternion(sample.coeffs.pose.global.rotation);
  const int world_quat = graph::quat_left_multiply(t, f.quats, gq);

  graph::RasterizeNode render =
      graph::rasterize(t, world_pos, world_quat, f.log_scales, f.logits, f.sh, sample.camera,
                       synthgen::background_color());

  SampleLossNodes out;
  out.render = render.image;
  out.color_tex = objectives::photometric(t, f.maps.tex, x_tex, w, &extractor);
  out.color_verts = objectives::photometric(t, f.maps.verts, x_verts, w, &extractor);
  out.color_expr = objectives::photometric(t, f.maps.expr, x_exp, w, &extractor);
  out.color_image = objectives::photometric(t, render.image, target, w, &extractor);

  auto mask_of = [](const uvmap::UvMap& m) {
    Tensor mask({3, m.height, m.width});
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.valid_at(x, y))
          for (int c = 0; c < 3; ++c) mask.at(c, y, x) = 1.0;
    return mask;
  };
  out.geom = objectives::geometric(t, f.maps.verts, x_verts, f.maps.expr, x_exp,
                                   mask_of(sample.x_verts), mask_of(sample.x_exp), w.geometric);

  const int reg_face = objectives::gaussian_reg(t, f.face.dpos, f.face.dlog_scale,
                                                f.face.dlogit, f.face.sh, w);
  const int reg_hair = objectives::gaussian_reg(t, f.hair.dpos, f.hair.dlog_scale,
                                                f.hair.dlogit, f.hair.sh, w);
  out.reg = t.add(reg_face, reg_hair);
  out.q = f.q_loss;

  int total = t.add(out.color_tex, out.color_verts);
  total = t.add(total, out.color_expr);
  total = t.add(total, out.color_image);
  total = t.add(total, out.geom);
  total = t.add(total, out.reg);
  total = t.add(total, out.q);
  out.total = total;
  return out;
}

void append_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows,
                    bool write_header) {
  std::ofstream f(path, write_header ? std::ios::trunc : std::ios::app);
  if (!f) throw data_error("train log: cannot open '" + path + "'");
  if (write_header)
    f << "step,color_tex,color_verts,color_expr,color_image,geom,reg,q,total,lr\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g\n", r.step,
                  r.color_tex, r.color_verts, r.color_expr, r.color_image, r.geom, r.reg, r.q,
                  r.total, r.lr);
    f << buf;
  }
}

}  // namespace

void save_checkpoint(const prior::PriorModel& model, const Adam& opt, int64_t step,
                     const std::string& path) {
  TensorContainer c;
  model.serialize_into(c);
  opt.serialize_into(c);
  c.set_i64("__step__", {step});
  c.save(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  LoadedCheckpoint out{prior::PriorModel::deserialize_from(c), {}, 0};
  out.opt.deserialize_from(c);
  out.step = c.get_i64("__step__").at(0);
  return out;
}

LoadedCheckpoint load_checkpoint_expect(const std::string& path, const prior::PriorConfig& cfg) {
  TensorContainer c = TensorContainer::load(path);
  LoadedCheckpoint out{prior::PriorModel::deserialize_expect(c, cfg), {}, 0};
  out.opt.deserialize_from(c);
  out.step = c.get_i64("__step__").at(0);
  return out;
}

TrainResult train_prior(const synthgen::DatasetIndex& dataset, prior::PriorModel& model,
                        const TrainConfig& cfg, const std::string& out_dir,
                        const std::string& resume_checkpoint) {
  cfg.validate();
  require(!dataset.samples.empty(), "train: empty dataset");
  require(dataset.map_size == model.config().map_size,
          "train: dataset map resolution does not match the model config");
  fs::create_directories(out_dir);

  Adam opt;
  int start_step = 0;
  if (!resume_checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint_expect(resume_checkpoint, model.config());
    model = std::move(ck.model);
    opt = std::move(ck.opt);
    start_step = static_cast<int>(ck.step);
  }

  const geometry::MorphableModel bundle =
      geometry::MorphableModel::load((fs::path(dataset.root) / dataset.model_path).string());
  auto [face_grid, hair_grid] = make_grids(bundle, model.config());
  const objectives::RandomConvExtractor extractor;

  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  TrainResult result;
  std::vector<TrainLogRow> pending;

  Rng rng(cfg.seed);
  // Replay the sampler to keep resumed runs on the original batch sequence.
  for (int s = 0; s < start_step; ++s)
    for (int b = 0; b < cfg.batch_size; ++b) rng.uniform_int(static_cast<int>(dataset.samples.size()));

  auto trainable = [](const std::string&) { return true; };

  for (int step = start_step; step < cfg.iterations; ++step) {
    const real lr = lr_at(cfg, step);
    std::map<std::string, Tensor> grads;
    TrainLogRow row;
    row.step = step;
    row.lr = lr;
    std::vector<int> batch_ids;

    for (int b = 0; b < cfg.batch_size; ++b) {
      const int idx = rng.uniform_int(static_cast<int>(dataset.samples.size()));
      batch_ids.push_back(idx);
      synthgen::Sample sample =
          synthgen::load_sample(dataset, dataset.samples[static_cast<size_t>(idx)]);

      ad::Tape tape;
      prior::TapeParams params = model.push(tape, trainable);
      SampleLossNodes nodes =
          build_sample_loss(tape, model, params, sample, face_grid, hair_grid, cfg.weights,
                            extractor);
      const real total = tape.value(nodes.total)[0];
      if (!std::isfinite(total)) {
        nlohmann::ordered_json dump;
        dump["step"] = step;
        dump["batch"] = batch_ids;
        dump["loss"] = "non-finite";
        std::ofstream f((fs::path(out_dir) / "nan_dump.json").string());
        f << dump.dump(1) << "\n";
        throw numeric_error("train: non-finite loss at step " + std::to_string(step));
      }
      tape.backward(nodes.total);

      const real inv_batch = 1.0 / static_cast<real>(cfg.batch_size);
      for (const auto& [name, node] : params) {
        const Tensor& g = tape.grad(node);
        auto it = grads.find(name);
        if (it == grads.end()) {
          Tensor scaled = g;
          for (real& x : scaled.data) x *= inv_batch;
          grads.emplace(name, std::move(scaled));
        } else {
          for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += inv_batch * g[i];
        }
      }
      row.color_tex += inv_batch * tape.value(nodes.color_tex)[0];
      row.color_verts += inv_batch * tape.value(nodes.color_verts)[0];
      row.color_expr += inv_batch * tape.value(nodes.color_expr)[0];
      row.color_image += inv_batch * tape.value(nodes.color_image)[0];
      row.geom += inv_batch * tape.value(nodes.geom)[0];
      row.reg += inv_batch * tape.value(nodes.reg)[0];
      row.q += inv_batch * tape.value(nodes.q)[0];
      row.total += inv_batch * total;
    }

    opt.step(model, grads, lr);

    if (step % cfg.log_every == 0 || step + 1 == cfg.iterations) {
      pending.push_back(row);
      result.log.push_back(row);
    }
    if (pending.size() >= 200 || step + 1 == cfg.iterations) {
      append_log_csv(log_path, pending, result.log.size() == pending.size() && start_step == 0);
      pending.clear();
    }
    if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.iterations) {
      save_checkpoint(model, opt, step + 1,
                      (fs::path(out_dir) / ("checkpoint_" + std::to_string(step + 1) + ".bin"))
                          .string());
    }
  }
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.bin").string();
  save_checkpoint(model, opt, cfg.iterations, result.checkpoint_path);
  return result;
}

namespace {

/// EMA-based stopping shared by both inversion stages.
class EarlyStopper {
 public:
  explicit EarlyStopper(const InversionConfig& cfg) : cfg_(cfg) {}

  /// Returns true when optimization should stop. `on_improved` fires when the
  /// smoothed loss makes a new best at a check boundary.
  bool update(int step, real loss, const std::function<void()>& on_improved) {
    ema_ = first_ ? loss : cfg_.ema * ema_ + (1.0 - cfg_.ema) * loss;
    first_ = false;
    const int done = step + 1;
    if (done % cfg_.check_every != 0) return false;
    if (done <= cfg_.warmup) return false;  // never stops inside warmup
    if (ema_ < best_ * (1.0 - cfg_.tol)) {
      best_ = ema_;
      bad_ = 0;
      if (on_improved) on_improved();
      return false;
    }
    ++bad_;
    return bad_ >= cfg_.patience;
  }

  /// Final check at budget exhaustion: keep the last weights if they beat the
  /// best snapshot.
  bool final_improves() const { return ema_ < best_; }

 private:
  const InversionConfig& cfg_;
  real ema_ = 0;
  real best_ = std::numeric_limits<real>::infinity();
  int bad_ = 0;
  bool first_ = true;
};

std::map<std::string, Tensor> snapshot_params(const prior::PriorModel& model,
                                              const std::function<bool(const std::string&)>& sel) {
  std::map<std::string, Tensor> out;
  for (const auto& name : model.param_names())
    if (sel(name)) out.emplace(name, model.param(name));
  return out;
}

void restore_params(prior::PriorModel& model, const std::map<std::string, Tensor>& snap) {
  for (const auto& [name, tensor] : snap) model.param(name) = tensor;
}

int masked_photometric(ad::Tape& t, int render, int target, const Tensor& mask,
                       const objectives::LossWeights& w,
                       const objectives::EmbeddingExtractor* ex, bool use_mask) {
  if (!use_mask || mask.numel() == 0)
    return objectives::photometric(t, render, target, w, ex);
  const int m = t.constant(mask_to_chw3(mask));
  return objectives::photometric(t, t.mul(render, m), t.mul(target, m), w, ex);
}

std::pair<uvmap::SampleGrid, uvmap::SampleGrid> subject_grids(const InversionSubject& subject,
                                                              const prior::PriorConfig& cfg) {
  auto face_it = subject.uv_regions.find("face");
  auto hair_it = subject.uv_regions.find("hair");
  require(face_it != subject.uv_regions.end() && hair_it != subject.uv_regions.end(),
          "invert: subject lacks face/hair atlas regions");
  const real margin = 2.0 / static_cast<real>(cfg.map_size);
  return {uvmap::make_sample_grid("face", face_it->second, cfg.face_grid, cfg.face_grid, margin),
          uvmap::make_sample_grid("hair", hair_it->second, cfg.hair_grid, cfg.hair_grid, margin)};
}

}  // namespace

Stage1Result invert_stage1(const InversionSubject& subject, prior::PriorModel& model,
                           const InversionConfig& cfg) {
  cfg.validate();
  require(!subject.frames.empty(), "invert: no input frames");
  const int budget = cfg.scale_factor * static_cast<int>(subject.frames.size());

  require(subject.x_tex.width == model.config().map_size,
          "invert: identity maps do not match the model resolution");

  const objectives::RandomConvExtractor extractor;
  Adam opt;
  EarlyStopper stopper(cfg);
  Stage1Result result;

  auto trainable = [](const std::string& name) { return prior::is_encoder_id_param(name); };
  std::map<std::string, Tensor> best = snapshot_params(model, prior::is_encoder_id_param);

  auto [face_grid, hair_grid] = subject_grids(subject, model.config());

  for (int step = 0; step < budget; ++step) {
    const InversionFrame& frame =
        subject.frames[static_cast<size_t>(step) % subject.frames.size()];
    ad::Tape tape;
    prior::TapeParams params = model.push(tape, trainable);
    const int x_tex = tape.constant(subject.x_tex.to_chw());
    const int x_verts = tape.constant(subject.x_verts.to_chw());
    const int x_exp = tape.constant(frame.x_exp.to_chw());
    prior::ForwardNodes f =
        model.forward(tape, params, x_tex, x_verts, x_exp, face_grid, hair_grid);
    const int world_pos = graph::rigid_points(tape, f.positions, frame.pose.global.rotation,
                                              frame.pose.global.translation);
    const int world_quat = graph::quat_left_multiply(
        tape, f.quats, primitives::rotation_to_quaternion(frame.pose.global.rotation));
    graph::RasterizeNode render = graph::rasterize(tape, world_pos, world_quat, f.log_scales,
                                                   f.logits, f.sh, frame.camera,
                                                   synthgen::background_color());
    const int target = tape.constant(frame.image);
    const int loss = masked_photometric(tape, render.image, target, frame.mask, cfg.weights,
                                        &extractor, cfg.use_mask);
    const real loss_v = tape.value(loss)[0];
    if (!std::isfinite(loss_v)) throw numeric_error("invert stage 1: non-finite loss");
    tape.backward(loss);

    std::map<std::string, Tensor> grads;
    for (const auto& [name, node] : params)
      if (trainable(name)) grads.emplace(name, tape.grad(node));
    opt.step(model, grads, cfg.stage1_lr);

    result.trace.loss.push_back(loss_v);
    result.trace.photometric.push_back(loss_v);
    ++result.trace.steps;
    if (stopper.update(step, loss_v,
                       [&] { best = snapshot_params(model, prior::is_encoder_id_param); })) {
      result.trace.early_stopped = true;
      break;
    }
  }
  if (cfg.restore_best && !result.trace.early_stopped && stopper.final_improves()) {
    // budget exhausted while still improving: keep the final weights
  } else if (cfg.restore_best) {
    restore_params(model, best);
  }

  // The pivot is the tuned encoder's prediction for the subject.
  ad::Tape tape;
  prior::TapeParams params = model.push(tape, [](const std::string&) { return false; });
  const int x_tex = tape.constant(subject.x_tex.to_chw());
  const int x_verts = tape.constant(subject.x_verts.to_chw());
  result.pivot = tape.value(model.encode_id(tape, params, x_tex, x_verts));
  return result;
}

Stage2Result invert_stage2(const InversionSubject& subject, prior::PriorModel& model,
                           const Tensor& pivot, const InversionConfig& cfg,
                           const objectives::EmbeddingExtractor& extractor) {
  cfg.validate();
  require(!subject.frames.empty(), "invert: no input frames");
  require(pivot.rank() == 3 && pivot.dim(0) == model.config().n_id,
          "invert stage 2: pivot has wrong shape");
  const int budget = cfg.scale_factor * static_cast<int>(subject.frames.size());

  auto [face_grid, hair_grid] = subject_grids(subject, model.config());

  // Frozen encoders + frozen codebooks: quantized latents are constants.
  Tensor zq_id;
  std::vector<Tensor> zq_expr_per_frame;
  {
    ad::Tape tape;
    prior::TapeParams params = model.push(tape, [](const std::string&) { return false; });
    prior::QuantizeNodes q = model.quantize(tape, params, tape.constant(pivot), "id");
    zq_id = tape.value(q.quantized_chw);
    for (const auto& frame : subject.frames) {
      const int z = model.encode_expr(tape, params, tape.constant(frame.x_exp.to_chw()));
      prior::QuantizeNodes qe = model.quantize(tape, params, z, "expr");
      zq_expr_per_frame.push_back(tape.value(qe.quantized_chw));
    }
  }

  Adam opt;
  EarlyStopper stopper(cfg);
  Stage2Result result;
  auto trainable = [](const std::string& name) { return prior::is_stage2_param(name); };
  std::map<std::string, Tensor> best = snapshot_params(model, prior::is_stage2_param);

  for (int step = 0; step < budget; ++step) {
    const size_t fi = static_cast<size_t>(step) % subject.frames.size();
    const InversionFrame& frame = subject.frames[fi];
    ad::Tape tape;
    prior::TapeParams params = model.push(tape, trainable);
    prior::DecodedMaps maps = model.decode(tape, params, tape.constant(zq_id),
                                           tape.constant(zq_expr_per_frame[fi]));
    const int phi_map = tape.add(maps.verts, maps.expr);
    prior::PartNodes face = model.regress_part(tape, params, maps.feat, phi_map, face_grid);
    prior::PartNodes hair = model.regress_part(tape, params, maps.feat, phi_map, hair_grid);

    const int positions = tape.concat_rows(face.positions, hair.positions);
    const int quats = tape.concat_rows(face.quats, hair.quats);
    const int log_scales = tape.concat_rows(face.log_scales, hair.log_scales);
    const int m_total = face_grid.size() + hair_grid.size();
    const int logits =
        tape.reshape(tape.concat_rows(tape.reshape(face.logits, {face_grid.size(), 1}),
                                      tape.reshape(hair.logits, {hair_grid.size(), 1})),
                     {m_total});
    const int sh = tape.concat_rows(face.sh, hair.sh);

    const int world_pos = graph::rigid_points(tape, positions, frame.pose.global.rotation,
                                              frame.pose.global.translation);
    const int world_quat = graph::quat_left_multiply(
        tape, quats, primitives::rotation_to_quaternion(frame.pose.global.rotation));
    graph::RasterizeNode render = graph::rasterize(tape, world_pos, world_quat, log_scales,
                                                   logits, sh, frame.camera,
                                                   synthgen::background_color());
    const int target = tape.constant(frame.image);
    const int photo = masked_photometric(tape, render.image, target, frame.mask, cfg.weights,
                                         &extractor, cfg.use_mask);
    auto [id_loss, arc_loss] = objectives::identity_losses(tape, render.image, target, extractor);
    int loss = photo;
    loss = tape.add(loss, tape.scale(id_loss, cfg.weights.id_weight));
    loss = tape.add(loss, tape.scale(arc_loss, cfg.weights.arc_weight));

    const real loss_v = tape.value(loss)[0];
    if (!std::isfinite(loss_v)) throw numeric_error("invert stage 2: non-finite loss");
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, node] : params)
      if (trainable(name)) grads.emplace(name, tape.grad(node));
    opt.step(model, grads, cfg.stage2_lr);

    result.trace.loss.push_back(loss_v);
    result.trace.photometric.push_back(tape.value(photo)[0]);
    ++result.trace.steps;
    if (stopper.update(step, loss_v,
                       [&] { best = snapshot_params(model, prior::is_stage2_param); })) {
      result.trace.early_stopped = true;
      break;
    }
  }
  if (cfg.restore_best && !result.trace.early_stopped && stopper.final_improves()) {
    // keep final weights
  } else if (cfg.restore_best) {
    restore_params(model, best);
  }
  return result;
}

void save_personalized(const prior::PriorModel& model, const Tensor& pivot, int subject_id,
                       const std::string& path) {
  TensorContainer c;
  model.serialize_into(c);
  c.set_tensor("pivot.z_id", pivot);
  c.set_i64("subject_id", {subject_id});
  c.save(path);
}

Personalized load_personalized(const std::string& path) {
  TensorContainer c = TensorContainer::load(path);
  Personalized p{prior::PriorModel::deserialize_from(c), c.get_tensor("pivot.z_id"),
                 static_cast<int>(c.get_i64("subject_id").at(0))};
  return p;
}

Tensor render_with_pivot(prior::PriorModel& model, const Tensor& pivot, const uvmap::UvMap& x_exp,
                         const geometry::Pose& pose, const splatter::Camera& cam,
                         const uvmap::SampleGrid& face_grid, const uvmap::SampleGrid& hair_grid) {
  ad::Tape tape;
  prior::TapeParams params = model.push(tape, [](const std::string&) { return false; });
  prior::QuantizeNodes q_id = model.quantize(tape, params, tape.constant(pivot), "id");
  const int z_expr = model.encode_expr(tape, params, tape.constant(x_exp.to_chw()));
  prior::QuantizeNodes q_expr = model.quantize(tape, params, z_expr, "expr");
  prior::DecodedMaps maps = model.decode(tape, params, q_id.quantized_chw, q_expr.quantized_chw);
  const int phi_map = tape.add(maps.verts, maps.expr);
  prior::PartNodes face = model.regress_part(tape, params, maps.feat, phi_map, face_grid);
  prior::PartNodes hair = model.regress_part(tape, params, maps.feat, phi_map, hair_grid);
  const int positions = tape.concat_rows(face.positions, hair.positions);
  const int quats = tape.concat_rows(face.quats, hair.quats);
  const int log_scales = tape.concat_rows(face.log_scales, hair.log_scales);
  const int m_total = face_grid.size() + hair_grid.size();
  const int logits =
      tape.reshape(tape.concat_rows(tape.reshape(face.logits, {face_grid.size(), 1}),
                                    tape.reshape(hair.logits, {hair_grid.size(), 1})),
                   {m_total});
  const int sh = tape.concat_rows(face.sh, hair.sh);
  const int world_pos =
      graph::rigid_points(tape, positions, pose.global.rotation, pose.global.translation);
  const int world_quat = graph::quat_left_multiply(
      tape, quats, primitives::rotation_to_quaternion(pose.global.rotation));
  graph::RasterizeNode render =
      graph::rasterize(tape, world_pos, world_quat, log_scales, logits, sh, cam,
                       synthgen::background_color());
  return tape.value(render.image);
}

std::vector<Tensor> reenact(Personalized& subject, const geometry::MorphableModel& bundle,
                            const std::vector<DrivingFrame>& driving,
                            const std::vector<splatter::Camera>& cameras) {
  require(!cameras.empty(), "reenact: no cameras");
  auto [face_grid, hair_grid] = make_grids(bundle, subject.model.config());
  std::vector<Tensor> out;
  out.reserve(driving.size());
  const int map_size = subject.model.config().map_size;
  for (size_t i = 0; i < driving.size(); ++i) {
    const auto& frame = driving[i];
    uvmap::UvMap x_exp = uvmap::rasterize_uv(
        bundle, geometry::expression_offsets(bundle, frame.gamma), map_size, map_size);
    const splatter::Camera& cam = cameras[i % cameras.size()];
    out.push_back(render_with_pivot(subject.model, subject.pivot, x_exp, frame.pose, cam,
                                    face_grid, hair_grid));
  }
  return out;
}

std::vector<DrivingFrame> load_driving(const std::string& path, int num_joints) {
  std::ifstream f(path);
  if (!f) throw data_error("driving: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("driving: bad JSON: ") + e.what());
  }
  std::vector<DrivingFrame> out;
  for (const auto& fj : j.at("frames")) {
    DrivingFrame frame;
    frame.gamma = fj.at("gamma").get<std::vector<real>>();
    frame.pose = pose_from_json(fj.at("pose"), num_joints);
    out.push_back(std::move(frame));
  }
  require(!out.empty(), "driving: no frames");
  return out;
}

std::vector<splatter::Camera> load_camera_path(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("camera path: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("camera path: bad JSON: ") + e.what());
  }
  std::vector<splatter::Camera> out;
  for (const auto& cj : j.at("cameras")) out.push_back(camera_from_json(cj));
  require(!out.empty(), "camera path: no cameras");
  return out;
}

std::vector<int> fibonacci_counts(int n) {
  static const std::vector<int> all = {1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987};
  std::vector<int> out;
  for (int v : all)
    if (v <= n) out.push_back(v);
  return out;
}

std::vector<std::vector<int>> select_frames(const std::vector<std::vector<real>>& expressions,
                                            const std::vector<int>& counts) {
  require(!expressions.empty(), "select_frames: empty expression set");
  const int n = static_cast<int>(expressions.size());
  int seed_index = 0;
  real best_norm = std::numeric_limits<real>::infinity();
  for (int i = 0; i < n; ++i) {
    real norm2 = 0;
    for (real x : expressions[static_cast<size_t>(i)]) norm2 += x * x;
    if (norm2 < best_norm) {  // strict: lowest index wins ties
      best_norm = norm2;
      seed_index = i;
    }
  }
  int max_count = 0;
  std::vector<int> clipped;
  for (int c : counts)
    if (c <= n) {
      clipped.push_back(c);
      max_count = std::max(max_count, c);
    }
  std::vector<int> order =
      max_count > 0 ? geometry::farthest_point_sample(expressions, max_count, seed_index)
                    : std::vector<int>{};
  std::vector<std::vector<int>> out;
  for (int c : clipped)
    out.emplace_back(order.begin(), order.begin() + c);
  return out;
}

std::vector<EvalRow> evaluate(Personalized& subject, const synthgen::DatasetIndex& test_split,
                              const objectives::EmbeddingExtractor& extractor,
                              const std::string& out_csv) {
  require(!test_split.samples.empty(), "evaluate: empty split");
  const geometry::MorphableModel bundle = geometry::MorphableModel::load(
      (fs::path(test_split.root) / test_split.model_path).string());
  auto [face_grid, hair_grid] = make_grids(bundle, subject.model.config());

  std::vector<EvalRow> rows;
  for (size_t i = 0; i < test_split.samples.size(); ++i) {
    const auto& rec = test_split.samples[i];
    synthgen::Sample sample = synthgen::load_sample(test_split, rec);
    Tensor render = render_with_pivot(subject.model, subject.pivot, sample.x_exp,
                                      sample.coeffs.pose, sample.camera, face_grid, hair_grid);
    // Metrics on 8-bit quantized images, the stored representation.
    const Tensor a = to_tensor(to_image8(render));
    const Tensor& b = sample.image;
    EvalRow row;
    row.frame = "id" + std::to_string(rec.identity) + "_ex" + std::to_string(rec.expression) +
                "_cam" + std::to_string(rec.camera);
    row.l1 = objectives::l1_metric(a, b);
    row.psnr = objectives::psnr(a, b);
    row.ssim = objectives::ssim_metric(a, b);
    row.perceptual = objectives::perceptual_metric(a, b, extractor);
    rows.push_back(std::move(row));
  }
  // Mean and standard deviation rows.
  auto stats = [&](auto field) {
    real mean = 0;
    for (const auto& r : rows) mean += field(r);
    mean /= static_cast<real>(rows.size());
    real var = 0;
    for (const auto& r : rows) {
      const real d = field(r) - mean;
      var += d * d;
    }
    var /= static_cast<real>(rows.size());
    return std::pair<real, real>(mean, std::sqrt(var));
  };
  auto [l1_m, l1_s] = stats([](const EvalRow& r) { return r.l1; });
  auto [ps_m, ps_s] = stats([](const EvalRow& r) { return r.psnr; });
  auto [ss_m, ss_s] = stats([](const EvalRow& r) { return r.ssim; });
  auto [pe_m, pe_s] = stats([](const EvalRow& r) { return r.perceptual; });
  rows.push_back({"mean", l1_m, ps_m, ss_m, pe_m});
  rows.push_back({"std", l1_s, ps_s, ss_s, pe_s});
  if (!out_csv.empty()) write_metrics_csv(rows, out_csv);
  return rows;
}

void write_metrics_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw data_error("metrics: cannot open '" + path + "'");
  f << "frame,L1,PSNR,SSIM,perceptual\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.4f,%.6f,%.6f\n", r.frame.c_str(), r.l1, r.psnr,
                  r.ssim, r.perceptual);
    f << buf;
  }
}

namespace {

splatter::Camera camera_from_json(const nlohmann::json& j) {
  splatter::Camera cam;
  const auto rot = j.at("rotation").get<std::vector<real>>();
  require(rot.size() == 9, "manifest: camera rotation must have 9 values");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[static_cast<size_t>(r * 3 + c)];
  const auto t = j.at("translation").get<std::vector<real>>();
  require(t.size() == 3, "manifest: camera translation must have 3 values");
  for (int a = 0; a < 3; ++a) cam.translation(a) = t[static_cast<size_t>(a)];
  cam.fx = j.at("fx");
  cam.fy = j.at("fy");
  cam.cx = j.at("cx");
  cam.cy = j.at("cy");
  cam.width = j.at("width");
  cam.height = j.at("height");
  cam.near_clip = j.at("near");
  cam.far_clip = j.at("far");
  cam.validate();
  return cam;
}

nlohmann::ordered_json camera_to_json(const splatter::Camera& cam) {
  nlohmann::ordered_json j;
  std::vector<real> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[static_cast<size_t>(r * 3 + c)] = cam.rotation(r, c);
  j["rotation"] = rot;
  j["translation"] = std::vector<real>{cam.translation(0), cam.translation(1), cam.translation(2)};
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  j["near"] = cam.near_clip;
  j["far"] = cam.far_clip;
  return j;
}

geometry::Pose pose_from_json(const nlohmann::json& j, int num_joints) {
  geometry::Pose pose = geometry::Pose::rest(num_joints);
  if (j.contains("global")) {
    const auto g = j.at("global").get<std::vector<real>>();
    require(g.size() == 12, "manifest: pose.global must have 12 values");
    pose.global = geometry::rigid_from_tensor(Tensor({12}, g));
  }
  if (j.contains("joints")) {
    const auto joints = j.at("joints");
    require(static_cast<int>(joints.size()) <= num_joints, "manifest: too many joints");
    for (size_t i = 0; i < joints.size(); ++i) {
      const auto g = joints[i].get<std::vector<real>>();
      require(g.size() == 12, "manifest: pose joint must have 12 values");
      pose.joint[i] = geometry::rigid_from_tensor(Tensor({12}, g));
    }
  }
  return pose;
}

std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path.string() : (base / path).string();
}

}  // namespace

InversionSubject load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("manifest: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("manifest: bad JSON: ") + e.what());
  }
  const fs::path base = fs::path(path).parent_path();

  InversionSubject subject;
  subject.subject_id = j.value("subject_id", -1);
  geometry::MorphableModel bundle;
  bool have_bundle = false;
  if (j.contains("model")) {
    bundle = geometry::MorphableModel::load(resolve(base, j.at("model")));
    subject.uv_regions = bundle.uv_regions;
    have_bundle = true;
  }

  int map_size = j.value("map_size", 0);
  const auto& ident = j.at("identity");
  if (ident.contains("maps")) {
    TensorContainer maps = TensorContainer::load(resolve(base, ident.at("maps")));
    auto unpack = [&](const char* name) {
      uvmap::UvMap m;
      m.data = maps.get_tensor(name);
      m.height = static_cast<int>(m.data.dim(0));
      m.width = static_cast<int>(m.data.dim(1));
      m.channels = static_cast<int>(m.data.dim(2));
      m.validity = maps.get_u8(std::string(name) + ".validity");
      return m;
    };
    subject.x_tex = unpack("x_tex");
    subject.x_verts = unpack("x_verts");
    map_size = subject.x_tex.width;
  } else if (ident.contains("delta")) {
    require(have_bundle, "manifest: identity.delta requires a model bundle");
    require(map_size > 0, "manifest: map_size required with identity.delta");
    const auto delta = ident.at("delta").get<std::vector<real>>();
    subject.x_verts = uvmap::rasterize_uv(bundle, geometry::morph_identity(bundle, delta),
                                          map_size, map_size);
    // No extracted texture: start from mid-gray, stage tuning owns the rest.
    subject.x_tex = uvmap::UvMap(map_size, map_size, 3);
    subject.x_tex.data.fill(0.5);
    std::fill(subject.x_tex.validity.begin(), subject.x_tex.validity.end(), 1);
  } else {
    throw data_error("manifest: identity needs either 'maps' or 'delta'");
  }

  for (const auto& fj : j.at("frames")) {
    InversionFrame frame;
    Image8 img = read_png(resolve(base, fj.at("image")));
    frame.image = to_tensor(img);
    if (fj.contains("mask") && !fj.at("mask").get<std::string>().empty()) {
      Image8 mask = read_png(resolve(base, fj.at("mask")));
      Tensor chw = to_tensor(mask);
      frame.mask = Tensor({mask.height, mask.width},
                          std::vector<real>(chw.data.begin(),
                                            chw.data.begin() + mask.height * mask.width));
    }
    frame.camera = camera_from_json(fj.at("camera"));
    frame.gamma = fj.at("gamma").get<std::vector<real>>();
    frame.pose = pose_from_json(fj.at("pose"), have_bundle ? bundle.num_joints() : 0);
    if (have_bundle) {
      frame.x_exp = uvmap::rasterize_uv(bundle, geometry::expression_offsets(bundle, frame.gamma),
                                        map_size, map_size);
    } else {
      throw data_error("manifest: a model bundle is required to rasterize expression maps");
    }
    subject.frames.push_back(std::move(frame));
  }
  require(!subject.frames.empty(), "manifest: no frames");
  return subject;
}

void write_toy_manifest(const synthgen::DatasetIndex& index, int identity,
                        const std::vector<int>& sample_indices, const std::string& out_path) {
  require(!sample_indices.empty(), "manifest: no samples selected");
  nlohmann::ordered_json j;
  const fs::path root = fs::absolute(index.root);
  j["model"] = (root / index.model_path).string();
  j["subject_id"] = identity;
  nlohmann::ordered_json ident;
  std::string maps_path;
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (int si : sample_indices) {
    require(si >= 0 && si < static_cast<int>(index.samples.size()),
            "manifest: sample index out of range");
    const auto& rec = index.samples[static_cast<size_t>(si)];
    require(rec.identity == identity, "manifest: sample does not belong to the subject");
    if (maps_path.empty()) maps_path = (root / rec.maps).string();
    synthgen::Sample sample = synthgen::load_sample(index, rec);
    nlohmann::ordered_json fj;
    fj["image"] = (root / rec.image).string();
    fj["mask"] = (root / rec.mask).string();
    fj["camera"] = camera_to_json(sample.camera);
    fj["gamma"] = sample.coeffs.gamma;
    nlohmann::ordered_json pj;
    Tensor g = geometry::rigid_to_tensor(sample.coeffs.pose.global);
    pj["global"] = g.data;
    nlohmann::ordered_json joints = nlohmann::ordered_json::array();
    for (const auto& jt : sample.coeffs.pose.joint) joints.push_back(geometry::rigid_to_tensor(jt).data);
    pj["joints"] = joints;
    fj["pose"] = pj;
    frames.push_back(fj);
  }
  ident["maps"] = maps_path;
  j["identity"] = ident;
  j["frames"] = frames;
  std::ofstream f(out_path);
  if (!f) throw data_error("manifest: cannot write '" + out_path + "'");
  f << j.dump(1) << "\n";
}

}  // namespace sprt::pipeline
