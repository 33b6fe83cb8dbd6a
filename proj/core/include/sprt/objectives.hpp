// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "sprt/autodiff.hpp"
#include "sprt/rng.hpp"

namespace sprt::objectives {

/// Weights for the photometric mix, the geometric term, the parameter
/// regularizers and the inversion identity terms.
struct LossWeights {
  real l1 = 0.8;
  real ssim = 0.2;
  real perceptual = 0.1;
  real geometric = 1.0;
  real pos_reg = 1e-4;
  real scale_reg = 1e-4;
  real opacity_reg = 1e-4;
  real shfc_reg = 1e-4;
  real id_weight = 1.0;
  real arc_weight = 1.0;
};

/// Pluggable feature extractor used by the perceptual and identity losses.
/// Implementations must be deterministic.
class EmbeddingExtractor {
 public:
  virtual ~EmbeddingExtractor() = default;
  /// Image node [3,H,W] -> embedding node [D].
  virtual int embed(ad::Tape& t, int image) const = 0;
  /// Image node -> per-level feature map nodes.
  virtual std::vector<int> layers(ad::Tape& t, int image) const = 0;
};

/// Desk-scale stand-in for pretrained perceptual/identity networks: a fixed
/// random-weight strided conv pyramid with a deterministic seed.
class RandomConvExtractor : public EmbeddingExtractor {
 public:
  explicit RandomConvExtractor(uint64_t seed = 0x5eed, int levels = 3);
  int embed(ad::Tape& t, int image) const override;
  std::vector<int> layers(ad::Tape& t, int image) const override;

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

// Tape-node losses; all return scalar node ids.
int l1(ad::Tape& t, int a, int b);
int masked_l1(ad::Tape& t, int a, int b, const Tensor& mask, real normalizer);

/// Mean local SSIM, 11x11 Gaussian window sigma=1.5, C1=1e-4, C2=9e-4 (unit
/// range), valid padding. Inputs at least 11x11.
int ssim(ad::Tape& t, int a, int b);
int ssim_loss(ad::Tape& t, int a, int b);  // 1 - ssim

int perceptual(ad::Tape& t, int a, int b, const EmbeddingExtractor& ex);

/// alpha*L1 + beta*(1-SSIM) + gamma*perceptual. Pass ex=nullptr to drop the
/// perceptual term regardless of gamma.
int photometric(ad::Tape& t, int a, int b, const LossWeights& w, const EmbeddingExtractor* ex);

/// delta * (masked L1 over valid texels of both map pairs).
int geometric(ad::Tape& t, int verts_pred, int verts_target, int expr_pred, int expr_target,
              const Tensor& verts_mask, const Tensor& expr_mask, real delta);

/// L2 penalties on the regressed offsets and the non-DC SH coefficients.
/// sh is [m,48] with the DC triple in columns 0..2.
int gaussian_reg(ad::Tape& t, int dpos, int dlog_scale, int dlogit, int sh,
                 const LossWeights& w);

/// (L_id, L_arc): cosine-embedding distance and summed per-layer feature L1.
std::pair<int, int> identity_losses(ad::Tape& t, int render, int target,
                                    const EmbeddingExtractor& ex);

// Value-level metrics.
real l1_metric(const Tensor& a, const Tensor& b);
real ssim_metric(const Tensor& a, const Tensor& b);
real perceptual_metric(const Tensor& a, const Tensor& b, const EmbeddingExtractor& ex);

/// 10*log10(1/MSE) on unit-range images, capped at 99 dB.
real psnr(const Tensor& a, const Tensor& b);

}  // namespace sprt::objectives
