// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include "sprt/objectives.hpp"

#include <cmath>

#include "sprt/nn.hpp"

namespace sprt::objectives {

namespace {

std::vector<real> ssim_window() {
  // 11-tap Gaussian, sigma 1.5, normalized.
  std::vector<real> k(11);
  real total = 0;
  for (int i = 0; i < 11; ++i) {
    const real d = i - 5.0;
    k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += k[static_cast<size_t>(i)];
  }
  for (real& v : k) v /= total;
  return k;
}

constexpr real kSsimC1 = 1e-4;  // (0.01*L)^2, L = 1
constexpr real kSsimC2 = 9e-4;  // (0.03*L)^2

}  // namespace

RandomConvExtractor::RandomConvExtractor(uint64_t seed, int levels) {
  Rng rng(seed);
  int in_ch = 3;
  int out_ch = 8;
  for (int l = 0; l < levels; ++l) {
    weights_.push_back(nn::conv_weight_init(rng, out_ch, in_ch, 3, 3));
    Tensor b({out_ch});
    for (real& v : b.data) v = rng.normal(0.0, 0.05);
    biases_.push_back(b);
    in_ch = out_ch;
    out_ch *= 2;
  }
}

std::vector<int> RandomConvExtractor::layers(ad::Tape& t, int image) const {
  std::vector<int> out;
  int h = image;
  for (size_t l = 0; l < weights_.size(); ++l) {
    int w = t.constant(weights_[l]);
    int b = t.constant(biases_[l]);
    h = t.silu(nn::conv2d(t, h, w, b, /*stride=*/2, /*pad=*/1));
    out.push_back(h);
  }
  return out;
}

int RandomConvExtractor::embed(ad::Tape& t, int image) const {
  std::vector<int> feats = layers(t, image);
  return t.global_avg_pool(feats.back());
}

int l1(ad::Tape& t, int a, int b) { return t.mean(t.abs(t.sub(a, b))); }

int masked_l1(ad::Tape& t, int a, int b, const Tensor& mask, real normalizer) {
  require(normalizer > 0, "masked_l1: empty mask");
  int m = t.constant(mask);
  return t.scale(t.sum(t.mul(t.abs(t.sub(a, b)), m)), 1.0 / normalizer);
}

int ssim(ad::Tape& t, int a, int b) {
  require(t.value(a).shape == t.value(b).shape, "ssim: shape mismatch");
  require(t.value(a).rank() == 3, "ssim: expected [C,H,W]");
  require(t.value(a).dim(1) >= 11 && t.value(a).dim(2) >= 11,
          "ssim: image smaller than the 11x11 window");
  const auto window = ssim_window();
  auto blur = [&](int x) { return nn::separable_filter_valid(t, x, window); };

  const int mu_a = blur(a);
  const int mu_b = blur(b);
  const int mu_a2 = t.square(mu_a);
  const int mu_b2 = t.square(mu_b);
  const int mu_ab = t.mul(mu_a, mu_b);
  const int sigma_a2 = t.sub(blur(t.square(a)), mu_a2);
  const int sigma_b2 = t.sub(blur(t.square(b)), mu_b2);
  const int sigma_ab = t.sub(blur(t.mul(a, b)), mu_ab);

  const int num = t.mul(t.add_const(t.scale(mu_ab, 2.0), kSsimC1),
                        t.add_const(t.scale(sigma_ab, 2.0), kSsimC2));
  const int den = t.mul(t.add_const(t.add(mu_a2, mu_b2), kSsimC1),
                        t.add_const(t.add(sigma_a2, sigma_b2), kSsimC2));
  return t.mean(t.div(num, den));
}

int ssim_loss(ad::Tape& t, int a, int b) {
  return t.add_const(t.neg(ssim(t, a, b)), 1.0);
}

int perceptual(ad::Tape& t, int a, int b, const EmbeddingExtractor& ex) {
  std::vector<int> fa = ex.layers(t, a);
  std::vector<int> fb = ex.layers(t, b);
  require(fa.size() == fb.size() && !fa.empty(), "perceptual: extractor layer mismatch");
  int total = -1;
  for (size_t l = 0; l < fa.size(); ++l) {
    int term = t.mean(t.square(t.sub(fa[l], fb[l])));
    total = total < 0 ? term : t.add(total, term);
  }
  return total;
}

int photometric(ad::Tape& t, int a, int b, const LossWeights& w, const EmbeddingExtractor* ex) {
  int loss = t.scale(l1(t, a, b), w.l1);
  if (w.ssim != 0.0) loss = t.add(loss, t.scale(ssim_loss(t, a, b), w.ssim));
  if (ex != nullptr && w.perceptual != 0.0)
    loss = t.add(loss, t.scale(perceptual(t, a, b, *ex), w.perceptual));
  return loss;
}

int geometric(ad::Tape& t, int verts_pred, int verts_target, int expr_pred, int expr_target,
              const Tensor& verts_mask, const Tensor& expr_mask, real delta) {
  real verts_count = 0, expr_count = 0;
  for (real v : verts_mask.data) verts_count += v;
  for (real v : expr_mask.data) expr_count += v;
  const int lv = masked_l1(t, verts_pred, verts_target, verts_mask, verts_count);
  const int le = masked_l1(t, expr_pred, expr_target, expr_mask, expr_count);
  return t.scale(t.add(lv, le), delta);
}

int gaussian_reg(ad::Tape& t, int dpos, int dlog_scale, int dlogit, int sh,
                 const LossWeights& w) {
  const int m = static_cast<int>(t.value(dpos).dim(0));
  require(t.value(sh).rank() == 2 && t.value(sh).dim(1) == 48, "gaussian_reg: sh must be [m,48]");
  const real inv_m = 1.0 / static_cast<real>(m);
  int loss = t.scale(t.sum(t.square(dpos)), w.pos_reg * inv_m);
  loss = t.add(loss, t.scale(t.sum(t.square(dlog_scale)), w.scale_reg * inv_m));
  loss = t.add(loss, t.scale(t.sum(t.square(dlogit)), w.opacity_reg * inv_m));
  // Penalize only the non-DC coefficients (DC triple sits in columns 0..2).
  Tensor mask({m, 48});
  for (int i = 0; i < m; ++i)
    for (int j = 3; j < 48; ++j) mask.at(i, j) = 1.0;
  loss = t.add(loss, t.scale(t.sum(t.mul(t.square(sh), t.constant(mask))), w.shfc_reg * inv_m));
  return loss;
}

std::pair<int, int> identity_losses(ad::Tape& t, int render, int target,
                                    const EmbeddingExtractor& ex) {
  const int ea = ex.embed(t, render);
  const int eb = ex.embed(t, target);
  const int na = t.sqrt(t.add_const(t.dot(ea, ea), 1e-12));
  const int nb = t.sqrt(t.add_const(t.dot(eb, eb), 1e-12));
  const int cosine = t.div(t.dot(ea, eb), t.mul(na, nb));
  const int id_loss = t.add_const(t.neg(cosine), 1.0);

  std::vector<int> fa = ex.layers(t, render);
  std::vector<int> fb = ex.layers(t, target);
  int arc = -1;
  for (size_t l = 0; l < fa.size(); ++l) {
    int term = l1(t, fa[l], fb[l]);
    arc = arc < 0 ? term : t.add(arc, term);
  }
  return {id_loss, arc};
}

real l1_metric(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "l1: shape mismatch");
  real acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<real>(a.numel());
}

real ssim_metric(const Tensor& a, const Tensor& b) {
  ad::Tape t;
  return t.value(ssim(t, t.constant(a), t.constant(b)))[0];
}

real perceptual_metric(const Tensor& a, const Tensor& b, const EmbeddingExtractor& ex) {
  ad::Tape t;
  return t.value(perceptual(t, t.constant(a), t.constant(b), ex))[0];
}

real psnr(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "psnr: shape mismatch");
  real mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const real d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<real>(a.numel());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

}  // namespace sprt::objectives
