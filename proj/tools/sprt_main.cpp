// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
//
// One binary, five subcommands: gen-data, train-prior, invert, reenact, eval.
// Exit codes: 0 ok, 2 bad usage/config, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sprt/config.hpp"
#include "sprt/image.hpp"
#include "sprt/parallel.hpp"
#include "sprt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sprt;

namespace {

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("SPRT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

RunConfig load_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig::defaults() : RunConfig::from_file(path);
}

struct CommonFlags {
  std::string config;
  int threads = 0;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config, "Run configuration (TOML)");
  if (config_required) opt->required();
  cmd->add_option("--threads", flags.threads,
                  "Worker threads (default 1; SPRT_THREADS env as fallback)");
  cmd->add_option("--seed", flags.seed, "Override the config seed for this command");
}

int cmd_gen_data(const CommonFlags& flags, const std::string& out_dir) {
  RunConfig cfg = load_config_or_default(flags.config);
  cfg.apply_renderer();
  set_thread_count(resolve_threads(flags.threads));
  if (flags.seed >= 0) cfg.dataset.seed = static_cast<uint64_t>(flags.seed);
  synthgen::DatasetIndex idx = synthgen::generate(cfg.dataset, out_dir);
  std::cout << "wrote " << idx.samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train_prior(const CommonFlags& flags, const std::string& data_dir,
                    const std::string& out_dir, const std::string& resume) {
  RunConfig cfg = load_config_or_default(flags.config);
  cfg.apply_renderer();
  set_thread_count(resolve_threads(flags.threads));
  if (flags.seed >= 0) cfg.train.seed = static_cast<uint64_t>(flags.seed);
  synthgen::DatasetIndex idx =
      synthgen::DatasetIndex::load((fs::path(data_dir) / "index.json").string());
  if (idx.map_size != cfg.model.map_size)
    throw config_error("train-prior: dataset map resolution " + std::to_string(idx.map_size) +
                       " does not match model.map_size " + std::to_string(cfg.model.map_size));
  prior::PriorModel model = prior::PriorModel::init(cfg.model, cfg.train.seed);
  pipeline::TrainResult result =
      pipeline::train_prior(idx, model, cfg.train, out_dir, resume);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

void write_stage_csv(const pipeline::StageTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw data_error("invert: cannot write '" + path + "'");
  f << "step,loss,photometric\n";
  for (size_t i = 0; i < trace.loss.size(); ++i)
    f << i << "," << trace.loss[i] << "," << trace.photometric[i] << "\n";
}

int cmd_invert(const CommonFlags& flags, const std::string& checkpoint,
               const std::string& manifest_path, int views, const std::string& out_dir) {
  RunConfig cfg = load_config_or_default(flags.config);
  cfg.apply_renderer();
  set_thread_count(resolve_threads(flags.threads));
  if (flags.seed >= 0) cfg.inversion.seed = static_cast<uint64_t>(flags.seed);

  pipeline::LoadedCheckpoint ck = pipeline::load_checkpoint(checkpoint);
  pipeline::InversionSubject subject = pipeline::load_manifest(manifest_path);
  if (views > static_cast<int>(subject.frames.size()))
    throw std::invalid_argument("invert: --views exceeds the manifest frame count");
  if (views < static_cast<int>(subject.frames.size())) {
    // Farthest-point selection over the manifest's expression coefficients.
    std::vector<std::vector<real>> gammas;
    for (const auto& frame : subject.frames) gammas.push_back(frame.gamma);
    auto picks = pipeline::select_frames(gammas, {views});
    std::vector<pipeline::InversionFrame> chosen;
    for (int i : picks.front()) chosen.push_back(subject.frames[static_cast<size_t>(i)]);
    subject.frames = std::move(chosen);
  }

  fs::create_directories(out_dir);
  pipeline::Stage1Result s1 = pipeline::invert_stage1(subject, ck.model, cfg.inversion);
  write_stage_csv(s1.trace, (fs::path(out_dir) / "stage1_loss.csv").string());
  const objectives::RandomConvExtractor extractor;
  pipeline::Stage2Result s2 =
      pipeline::invert_stage2(subject, ck.model, s1.pivot, cfg.inversion, extractor);
  write_stage_csv(s2.trace, (fs::path(out_dir) / "stage2_loss.csv").string());

  const std::string personalized = (fs::path(out_dir) / "personalized.bin").string();
  pipeline::save_personalized(ck.model, s1.pivot, subject.subject_id, personalized);

  // Preview renders of the tuned model on the input views.
  pipeline::Personalized p = pipeline::load_personalized(personalized);
  auto face_it = subject.uv_regions.find("face");
  auto hair_it = subject.uv_regions.find("hair");
  require(face_it != subject.uv_regions.end() && hair_it != subject.uv_regions.end(),
          "invert: manifest model lacks atlas regions");
  const real margin = 2.0 / p.model.config().map_size;
  const uvmap::SampleGrid face_grid = uvmap::make_sample_grid(
      "face", face_it->second, p.model.config().face_grid, p.model.config().face_grid, margin);
  const uvmap::SampleGrid hair_grid = uvmap::make_sample_grid(
      "hair", hair_it->second, p.model.config().hair_grid, p.model.config().hair_grid, margin);
  for (size_t i = 0; i < subject.frames.size(); ++i) {
    const auto& frame = subject.frames[i];
    Tensor render = pipeline::render_with_pivot(p.model, p.pivot, frame.x_exp, frame.pose,
                                                frame.camera, face_grid, hair_grid);
    write_png((fs::path(out_dir) / ("preview_" + std::to_string(i) + ".png")).string(),
              to_image8(render));
  }
  std::cout << "personalized: " << personalized << "\n";
  return 0;
}

int cmd_reenact(const CommonFlags& flags, const std::string& personalized,
                const std::string& driving_path, const std::string& camera_path,
                const std::string& bundle_path, const std::string& out_dir) {
  RunConfig cfg = load_config_or_default(flags.config);
  cfg.apply_renderer();
  set_thread_count(resolve_threads(flags.threads));
  pipeline::Personalized p = pipeline::load_personalized(personalized);
  geometry::MorphableModel bundle = geometry::MorphableModel::load(bundle_path);
  std::vector<pipeline::DrivingFrame> driving =
      pipeline::load_driving(driving_path, bundle.num_joints());
  std::vector<splatter::Camera> cams = pipeline::load_camera_path(camera_path);
  fs::create_directories(out_dir);
  std::vector<Tensor> frames = pipeline::reenact(p, bundle, driving, cams);
  for (size_t i = 0; i < frames.size(); ++i)
    write_png((fs::path(out_dir) / ("frame_" + std::to_string(i) + ".png")).string(),
              to_image8(frames[i]));
  std::cout << "wrote " << frames.size() << " frames to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& personalized,
             const std::string& data_dir, const std::string& split, const std::string& out_csv,
             real holdout_fraction, int64_t holdout_seed) {
  RunConfig cfg = load_config_or_default(flags.config);
  cfg.apply_renderer();
  set_thread_count(resolve_threads(flags.threads));
  pipeline::Personalized p = pipeline::load_personalized(personalized);
  synthgen::DatasetIndex idx =
      synthgen::DatasetIndex::load((fs::path(data_dir) / "index.json").string());
  if (p.subject_id >= 0)
    idx = idx.filter([&](const synthgen::SampleRecord& r) { return r.identity == p.subject_id; });
  synthgen::DatasetIndex chosen = idx;
  if (split != "all") {
    auto [train, test] =
        synthgen::holdout_split(idx, holdout_fraction, static_cast<uint64_t>(holdout_seed));
    chosen = split == "test" ? test : train;
  }
  if (chosen.samples.empty()) throw data_error("eval: empty split");
  const objectives::RandomConvExtractor extractor;
  auto rows = pipeline::evaluate(p, chosen, extractor, out_csv);
  const auto& mean = rows[rows.size() - 2];
  const auto& stdev = rows[rows.size() - 1];
  std::cout << "frames: " << rows.size() - 2 << "\n";
  std::cout << "mean  L1 " << mean.l1 << "  PSNR " << mean.psnr << "  SSIM " << mean.ssim
            << "  perceptual " << mean.perceptual << "\n";
  std::cout << "std   L1 " << stdev.l1 << "  PSNR " << stdev.psnr << "  SSIM " << stdev.ssim
            << "  perceptual " << stdev.perceptual << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sprt: drivable Gaussian head avatars from a synthetic prior"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, invert_flags, reenact_flags, eval_flags;

  auto* gen = app.add_subcommand("gen-data", "Generate the procedural toy dataset");
  std::string gen_out;
  add_common(gen, gen_flags, false);
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* train = app.add_subcommand("train-prior", "Train the generative prior");
  std::string train_data, train_out, train_resume;
  add_common(train, train_flags, false);
  train->add_option("--data", train_data, "Dataset directory (with index.json)")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--resume", train_resume, "Checkpoint to resume from");

  auto* invert = app.add_subcommand("invert", "Two-stage few-shot inversion");
  std::string inv_ckpt, inv_inputs, inv_out;
  int inv_views = 3;
  add_common(invert, invert_flags, false);
  invert->add_option("--checkpoint", inv_ckpt, "Trained prior checkpoint")->required();
  invert->add_option("--inputs", inv_inputs, "Inversion manifest JSON")->required();
  invert->add_option("--views", inv_views, "Number of input views (default 3)");
  invert->add_option("--out", inv_out, "Output directory")->required();

  auto* reenact = app.add_subcommand("reenact", "Drive a personalized avatar");
  std::string re_ckpt, re_driving, re_campath, re_bundle, re_out;
  add_common(reenact, reenact_flags, false);
  reenact->add_option("--personalized", re_ckpt, "Personalized checkpoint")->required();
  reenact->add_option("--driving", re_driving, "Driving manifest JSON")->required();
  reenact->add_option("--camera-path", re_campath, "Camera path JSON")->required();
  reenact->add_option("--model", re_bundle, "Morphable model bundle")->required();
  reenact->add_option("--out", re_out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Metrics over a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  real ev_fraction = 0.25;
  int64_t ev_seed = 99;
  add_common(eval, eval_flags, false);
  eval->add_option("--personalized", ev_ckpt, "Personalized checkpoint")->required();
  eval->add_option("--data", ev_data, "Dataset directory")->required();
  eval->add_option("--split", ev_split, "train | test | all");
  eval->add_option("--out", ev_out, "Metrics CSV path")->required();
  eval->add_option("--holdout-fraction", ev_fraction, "Test share for the split");
  eval->add_option("--holdout-seed", ev_seed, "Split seed");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gen_flags, gen_out);
    if (train->parsed())
      return cmd_train_prior(train_flags, train_data, train_out, train_resume);
    if (invert->parsed())
      return cmd_invert(invert_flags, inv_ckpt, inv_inputs, inv_views, inv_out);
    if (reenact->parsed())
      return cmd_reenact(reenact_flags, re_ckpt, re_driving, re_campath, re_bundle, re_out);
    if (eval->parsed())
      return cmd_eval(eval_flags, ev_ckpt, ev_data, ev_split, ev_out, ev_fraction, ev_seed);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
