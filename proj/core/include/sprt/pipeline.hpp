// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sprt/objectives.hpp"
#include "sprt/prior.hpp"
#include "sprt/synthgen.hpp"

namespace sprt::pipeline {

struct TrainConfig {
  int iterations = 5000;
  int batch_size = 1;
  real base_lr = 1.3e-5;           // paper-scale default; toy presets override
  std::vector<int> milestones;     // steps at which lr decays
  real decay = 0.66;
  objectives::LossWeights weights;
  int checkpoint_every = 1000;
  int log_every = 1;
  uint64_t seed = 7;

  void validate() const;
};

struct InversionConfig {
  real stage1_lr = 2e-3;
  real stage2_lr = 2e-3;
  int scale_factor = 10;   // iteration budget = scale_factor * frame count
  int warmup = 200;        // steps before early stopping may trigger
  real ema = 0.99;
  int patience = 20;       // failed checks before stopping
  int check_every = 25;    // steps per check
  real tol = 1e-4;         // relative EMA improvement threshold
  bool restore_best = true;
  bool use_mask = false;   // multiply both images by the frame mask in losses
  objectives::LossWeights weights;
  uint64_t seed = 11;

  void validate() const;
};

/// Adam with the cited-method defaults. Slots are lazily created per named
/// parameter, so one optimizer instance can serve stage-restricted updates.
class Adam {
 public:
  real beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  void step(prior::PriorModel& model, const std::map<std::string, Tensor>& grads, real lr);
  int64_t steps_taken() const { return step_; }

  void serialize_into(TensorContainer& c) const;
  void deserialize_from(const TensorContainer& c);

 private:
  struct Slot {
    Tensor m, v;
  };
  std::map<std::string, Slot> slots_;
  int64_t step_ = 0;
};

real lr_at(const TrainConfig& cfg, int step);  // multi-step decay schedule

struct TrainLogRow {
  int step = 0;
  real color_tex = 0, color_verts = 0, color_expr = 0, color_image = 0;
  real geom = 0, reg = 0, q = 0, total = 0, lr = 0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<TrainLogRow> log;
};

/// Full prior training loop: Adam over all weights and codebooks, multi-step
/// LR schedule, CSV log, periodic checkpoints. Non-finite loss aborts with a
/// diagnostic dump of the offending batch.
TrainResult train_prior(const synthgen::DatasetIndex& dataset, prior::PriorModel& model,
                        const TrainConfig& cfg, const std::string& out_dir,
                        const std::string& resume_checkpoint = "");

void save_checkpoint(const prior::PriorModel& model, const Adam& opt, int64_t step,
                     const std::string& path);
struct LoadedCheckpoint {
  prior::PriorModel model;
  Adam opt;
  int64_t step = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint load_checkpoint_expect(const std::string& path, const prior::PriorConfig& cfg);

/// One inversion input frame plus its conditioning.
struct InversionFrame {
  Tensor image;          // [3,H,W]
  Tensor mask;           // [H,W] or empty
  splatter::Camera camera;
  std::vector<real> gamma;
  geometry::Pose pose;
  uvmap::UvMap x_exp;    // rasterized expression map
};

struct InversionSubject {
  uvmap::UvMap x_tex, x_verts;  // identity conditioning for E_id
  std::vector<InversionFrame> frames;
  int subject_id = -1;
  // Atlas region rectangles for the sample grids (from the model bundle).
  std::map<std::string, Eigen::Vector4d> uv_regions;
};

/// JSON manifest -> subject. Frames carry {image, mask, camera, gamma, pose};
/// identity maps come from a maps container or from delta + the model bundle.
InversionSubject load_manifest(const std::string& path);

/// Write a manifest referencing existing toy-dataset files (absolute paths).
void write_toy_manifest(const synthgen::DatasetIndex& index, int identity,
                        const std::vector<int>& sample_indices, const std::string& out_path);

/// Per-part sample grids for the regions stored in the model bundle.
std::pair<uvmap::SampleGrid, uvmap::SampleGrid> make_grids(
    const geometry::MorphableModel& bundle, const prior::PriorConfig& cfg);

struct StageTrace {
  std::vector<real> loss;       // per step, the optimized objective
  std::vector<real> photometric;  // per step, photometric-only on the batch frame
  int steps = 0;
  bool early_stopped = false;
};

struct Stage1Result {
  Tensor pivot;  // identity latent grid [n_id, h, w]
  StageTrace trace;
};

/// Stage 1: tune only E_id (photometric objective over the input frames) and
/// return its prediction as the fixed pivot.
Stage1Result invert_stage1(const InversionSubject& subject, prior::PriorModel& model,
                           const InversionConfig& cfg);

struct Stage2Result {
  StageTrace trace;
};

/// Stage 2: decoders + regressors only, loss = photometric + id + arc.
Stage2Result invert_stage2(const InversionSubject& subject, prior::PriorModel& model,
                           const Tensor& pivot, const InversionConfig& cfg,
                           const objectives::EmbeddingExtractor& extractor);

/// Personalized checkpoint = tuned model + pivot + subject id.
void save_personalized(const prior::PriorModel& model, const Tensor& pivot, int subject_id,
                       const std::string& path);
struct Personalized {
  prior::PriorModel model;
  Tensor pivot;
  int subject_id = -1;
};
Personalized load_personalized(const std::string& path);

/// Render one frame with a fixed identity pivot (expression encoded from the
/// map, decoded, splatted at the frame's pose/camera).
Tensor render_with_pivot(prior::PriorModel& model, const Tensor& pivot, const uvmap::UvMap& x_exp,
                         const geometry::Pose& pose, const splatter::Camera& cam,
                         const uvmap::SampleGrid& face_grid, const uvmap::SampleGrid& hair_grid);

struct DrivingFrame {
  std::vector<real> gamma;
  geometry::Pose pose;
};

/// Reenactment: drive a personalized model with (gamma, pose) sequences.
std::vector<Tensor> reenact(Personalized& subject, const geometry::MorphableModel& bundle,
                            const std::vector<DrivingFrame>& driving,
                            const std::vector<splatter::Camera>& cameras);

/// Driving manifest: {"frames": [{"gamma": [...], "pose": {...}}, ...]}.
std::vector<DrivingFrame> load_driving(const std::string& path, int num_joints);

/// Camera path file: {"cameras": [{...camera...}, ...]}.
std::vector<splatter::Camera> load_camera_path(const std::string& path);

/// Unique Fibonacci frame counts {1,2,3,5,...,987} clipped to n.
std::vector<int> fibonacci_counts(int n);

/// Progressive FPS selection over expression vectors, seeded at the
/// most-neutral frame (smallest L2 norm, lowest index on ties).
std::vector<std::vector<int>> select_frames(const std::vector<std::vector<real>>& expressions,
                                            const std::vector<int>& counts);

struct EvalRow {
  std::string frame;
  real l1 = 0, psnr = 0, ssim = 0, perceptual = 0;
};

/// Render each test sample with the personalized model and compare against
/// the stored image (both quantized to 8 bits first). Appends mean and std
/// rows and writes the CSV when out_csv is nonempty.
std::vector<EvalRow> evaluate(Personalized& subject, const synthgen::DatasetIndex& test_split,
                              const objectives::EmbeddingExtractor& extractor,
                              const std::string& out_csv);

void write_metrics_csv(const std::vector<EvalRow>& rows, const std::string& path);

}  // namespace sprt::pipeline
