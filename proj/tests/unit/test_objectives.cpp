// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "sprt/objectives.hpp"

using namespace sprt;
using namespace sprt::objectives;

namespace {

Tensor random_image(Rng& rng, int c, int h, int w, real lo = 0.0, real hi = 1.0) {
  Tensor t({c, h, w});
  for (auto& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

real eval_scalar(const std::function<int(ad::Tape&)>& build) {
  ad::Tape t;
  return t.value(build(t))[0];
}

}  // namespace

TEST_CASE("l1: zero on identical inputs, one between constant 0 and 1") {
  Rng rng(71);
  Tensor a = random_image(rng, 3, 8, 8);
  CHECK(eval_scalar([&](ad::Tape& t) { return l1(t, t.constant(a), t.constant(a)); }) == 0.0);

  Tensor zero({3, 4, 4});
  Tensor one = Tensor::full({3, 4, 4}, 1.0);
  CHECK(eval_scalar([&](ad::Tape& t) { return l1(t, t.constant(zero), t.constant(one)); }) ==
        doctest::Approx(1.0));

  // random pair against the scalar oracle
  Tensor b = random_image(rng, 3, 8, 8);
  const real got = eval_scalar([&](ad::Tape& t) { return l1(t, t.constant(a), t.constant(b)); });
  CHECK(got == doctest::Approx(l1_metric(a, b)));
}

TEST_CASE("ssim: identical images score 1 (loss 0) and the metric is symmetric") {
  Rng rng(72);
  Tensor a = random_image(rng, 3, 16, 16);
  CHECK(ssim_metric(a, a) == doctest::Approx(1.0));
  CHECK(eval_scalar([&](ad::Tape& t) { return ssim_loss(t, t.constant(a), t.constant(a)); }) ==
        doctest::Approx(0.0));
  Tensor b = random_image(rng, 3, 16, 16);
  CHECK(ssim_metric(a, b) == doctest::Approx(ssim_metric(b, a)));
}

TEST_CASE("ssim: constant images follow the closed form") {
  // mu_a = 0.25, mu_b = 0.75, all variances zero:
  // ssim = (2*mu_a*mu_b + C1)*C2 / ((mu_a^2 + mu_b^2 + C1)*C2)
  Tensor a = Tensor::full({1, 16, 16}, 0.25);
  Tensor b = Tensor::full({1, 16, 16}, 0.75);
  const real c1 = 1e-4;
  const real want = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  CHECK(ssim_metric(a, b) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("ssim rejects images smaller than the window") {
  Tensor a({1, 8, 8});
  ad::Tape t;
  CHECK_THROWS_AS(ssim(t, t.constant(a), t.constant(a)), std::invalid_argument);
}

TEST_CASE("perceptual: zero on identical inputs, nonnegative, monotone toward target") {
  Rng rng(73);
  RandomConvExtractor ex(123);
  Tensor a = random_image(rng, 3, 16, 16);
  Tensor b = random_image(rng, 3, 16, 16);
  CHECK(perceptual_metric(a, a, ex) == doctest::Approx(0.0));
  CHECK(perceptual_metric(a, b, ex) >= 0.0);

  // Blending toward the target is non-increasing at t in {0, .5, 1}.
  auto lerp = [&](real f) {
    Tensor m = a;
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = (1 - f) * a[i] + f * b[i];
    return m;
  };
  const real at0 = perceptual_metric(lerp(0.0), b, ex);
  const real at5 = perceptual_metric(lerp(0.5), b, ex);
  const real at1 = perceptual_metric(lerp(1.0), b, ex);
  CHECK(at5 <= at0);
  CHECK(at1 <= at5);
  CHECK(at1 == doctest::Approx(0.0));
}

TEST_CASE("photometric: weighted mix reduces correctly") {
  Rng rng(74);
  RandomConvExtractor ex;
  Tensor a = random_image(rng, 3, 16, 16);
  Tensor b = random_image(rng, 3, 16, 16);
  LossWeights w;
  w.l1 = 0.8;
  w.ssim = 0.2;
  w.perceptual = 0.1;

  CHECK(eval_scalar([&](ad::Tape& t) {
          return photometric(t, t.constant(a), t.constant(a), w, &ex);
        }) == doctest::Approx(0.0));

  LossWeights no_perc = w;
  no_perc.perceptual = 0.0;
  const real without = eval_scalar(
      [&](ad::Tape& t) { return photometric(t, t.constant(a), t.constant(b), no_perc, &ex); });
  const real manual = 0.8 * l1_metric(a, b) + 0.2 * (1.0 - ssim_metric(a, b));
  CHECK(without == doctest::Approx(manual));

  const real full = eval_scalar(
      [&](ad::Tape& t) { return photometric(t, t.constant(a), t.constant(b), w, &ex); });
  CHECK(full == doctest::Approx(manual + 0.1 * perceptual_metric(a, b, ex)));
}

TEST_CASE("geometric: masked L1 over both map pairs") {
  Rng rng(75);
  Tensor vp = random_image(rng, 3, 8, 8, -1, 1);
  Tensor vt = random_image(rng, 3, 8, 8, -1, 1);
  Tensor ep = random_image(rng, 3, 8, 8, -1, 1);
  Tensor et = random_image(rng, 3, 8, 8, -1, 1);
  Tensor mask({3, 8, 8});
  int64_t valid = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const bool on = rng.uniform() < 0.6;
      if (!on) continue;
      valid += 3;
      for (int c = 0; c < 3; ++c) mask.at(c, y, x) = 1.0;
    }

  SUBCASE("perfect prediction and zero delta give zero") {
    CHECK(eval_scalar([&](ad::Tape& t) {
            return geometric(t, t.constant(vt), t.constant(vt), t.constant(et), t.constant(et),
                             mask, mask, 1.0);
          }) == doctest::Approx(0.0));
    CHECK(eval_scalar([&](ad::Tape& t) {
            return geometric(t, t.constant(vp), t.constant(vt), t.constant(ep), t.constant(et),
                             mask, mask, 0.0);
          }) == doctest::Approx(0.0));
  }

  SUBCASE("random maps match a masked scalar oracle") {
    const real delta = 1.7;
    real want = 0, want2 = 0;
    for (int64_t i = 0; i < vp.numel(); ++i) {
      want += std::abs(vp[i] - vt[i]) * mask[i];
      want2 += std::abs(ep[i] - et[i]) * mask[i];
    }
    want = delta * (want / static_cast<real>(valid) + want2 / static_cast<real>(valid));
    const real got = eval_scalar([&](ad::Tape& t) {
      return geometric(t, t.constant(vp), t.constant(vt), t.constant(ep), t.constant(et), mask,
                       mask, delta);
    });
    CHECK(got == doctest::Approx(want));
  }
}

TEST_CASE("gaussian_reg: zero offsets and DC-only sh vanish; band energy is quadratic") {
  const int m = 6;
  Tensor dpos({m, 3}), dls({m, 3}), dlg({m}), sh({m, 48});
  for (int i = 0; i < m; ++i) sh.at(i, 0) = 5.0;  // DC only: exempt
  LossWeights w;
  CHECK(eval_scalar([&](ad::Tape& t) {
          return gaussian_reg(t, t.constant(dpos), t.constant(dls), t.constant(dlg),
                              t.constant(sh), w);
        }) == doctest::Approx(0.0));

  // Put energy in band 1 and double it: the term must quadruple.
  Tensor sh1 = sh;
  for (int i = 0; i < m; ++i) sh1.at(i, 3) = 0.3;
  Tensor sh2 = sh;
  for (int i = 0; i < m; ++i) sh2.at(i, 3) = 0.6;
  const real e1 = eval_scalar([&](ad::Tape& t) {
    return gaussian_reg(t, t.constant(dpos), t.constant(dls), t.constant(dlg), t.constant(sh1), w);
  });
  const real e2 = eval_scalar([&](ad::Tape& t) {
    return gaussian_reg(t, t.constant(dpos), t.constant(dls), t.constant(dlg), t.constant(sh2), w);
  });
  CHECK(e2 == doctest::Approx(4.0 * e1).epsilon(1e-9));
}

TEST_CASE("gaussian_reg matches a scalar oracle on random offsets") {
  Rng rng(76);
  const int m = 5;
  Tensor dpos({m, 3}), dls({m, 3}), dlg({m}), sh({m, 48});
  for (auto& x : dpos.data) x = rng.normal();
  for (auto& x : dls.data) x = rng.normal();
  for (auto& x : dlg.data) x = rng.normal();
  for (auto& x : sh.data) x = rng.normal();
  LossWeights w;
  w.pos_reg = 0.3;
  w.scale_reg = 0.05;
  w.opacity_reg = 0.7;
  w.shfc_reg = 0.11;

  real want = 0;
  for (int i = 0; i < m; ++i) {
    for (int a = 0; a < 3; ++a) {
      want += w.pos_reg * dpos.at(i, a) * dpos.at(i, a) / m;
      want += w.scale_reg * dls.at(i, a) * dls.at(i, a) / m;
    }
    want += w.opacity_reg * dlg[i] * dlg[i] / m;
    for (int j = 3; j < 48; ++j) want += w.shfc_reg * sh.at(i, j) * sh.at(i, j) / m;
  }
  const real got = eval_scalar([&](ad::Tape& t) {
    return gaussian_reg(t, t.constant(dpos), t.constant(dls), t.constant(dlg), t.constant(sh), w);
  });
  CHECK(got == doctest::Approx(want));
}

TEST_CASE("identity losses: zero at equality, cosine bound, oracle match") {
  Rng rng(77);
  RandomConvExtractor ex;
  Tensor a = random_image(rng, 3, 16, 16);
  Tensor b = random_image(rng, 3, 16, 16);

  {
    ad::Tape t;
    auto [id_loss, arc_loss] = identity_losses(t, t.constant(a), t.constant(a), ex);
    CHECK(t.value(id_loss)[0] == doctest::Approx(0.0));
    CHECK(t.value(arc_loss)[0] == doctest::Approx(0.0));
  }
  {
    ad::Tape t;
    auto [id_loss, arc_loss] = identity_losses(t, t.constant(a), t.constant(b), ex);
    const real id_v = t.value(id_loss)[0];
    CHECK(id_v >= 0.0);
    CHECK(id_v <= 2.0);
    // Oracle: cosine over embeddings, L1 sums over layers.
    ad::Tape t2;
    const Tensor ea = t2.value(ex.embed(t2, t2.constant(a)));
    const Tensor eb = t2.value(ex.embed(t2, t2.constant(b)));
    real dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < ea.numel(); ++i) {
      dot += ea[i] * eb[i];
      na += ea[i] * ea[i];
      nb += eb[i] * eb[i];
    }
    const real want_id = 1.0 - dot / (std::sqrt(na + 1e-12) * std::sqrt(nb + 1e-12));
    CHECK(id_v == doctest::Approx(want_id).epsilon(1e-9));

    auto fa = ex.layers(t2, t2.constant(a));
    auto fb = ex.layers(t2, t2.constant(b));
    real want_arc = 0;
    for (size_t l = 0; l < fa.size(); ++l)
      want_arc += l1_metric(t2.value(fa[l]), t2.value(fb[l]));
    CHECK(t.value(arc_loss)[0] == doctest::Approx(want_arc).epsilon(1e-9));
  }
}

TEST_CASE("psnr: cap at 99, 20 dB at mse 0.01, oracle match") {
  Tensor a = Tensor::full({3, 4, 4}, 0.5);
  CHECK(psnr(a, a) == 99.0);

  Tensor b = a;
  for (auto& x : b.data) x += 0.1;  // mse = 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));

  Rng rng(78);
  Tensor c({3, 4, 4}), d({3, 4, 4});
  for (auto& x : c.data) x = rng.uniform();
  for (auto& x : d.data) x = rng.uniform();
  real mse = 0;
  for (int64_t i = 0; i < c.numel(); ++i) mse += (c[i] - d[i]) * (c[i] - d[i]);
  mse /= static_cast<real>(c.numel());
  CHECK(psnr(c, d) == doctest::Approx(10.0 * std::log10(1.0 / mse)));
}

TEST_CASE("losses differentiate: finite differences on random inputs") {
  Rng rng(79);
  RandomConvExtractor ex;
  Tensor a = random_image(rng, 3, 16, 16, 0.1, 0.9);
  Tensor b = random_image(rng, 3, 16, 16, 0.1, 0.9);
  LossWeights w;

  struct Case {
    const char* name;
    std::function<int(ad::Tape&, int, int)> build;
  };
  const std::vector<Case> cases = {
      {"l1", [](ad::Tape& t, int x, int y) { return l1(t, x, y); }},
      {"ssim", [](ad::Tape& t, int x, int y) { return ssim_loss(t, x, y); }},
      {"perceptual", [&](ad::Tape& t, int x, int y) { return perceptual(t, x, y, ex); }},
      {"photometric", [&](ad::Tape& t, int x, int y) { return photometric(t, x, y, w, &ex); }},
      {"identity", [&](ad::Tape& t, int x, int y) {
         auto [idl, arc] = identity_losses(t, x, y, ex);
         return t.add(idl, arc);
       }}};

  Rng pick(80);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    ad::Tape t;
    const int pa = t.param(a);
    const int loss = c.build(t, pa, t.constant(b));
    t.backward(loss);
    const Tensor& grad = t.grad(pa);
    for (int trial = 0; trial < 8; ++trial) {
      const int64_t i = pick.uniform_int(static_cast<int>(a.numel()));
      auto f = [&](real v) {
        Tensor a2 = a;
        a2[i] = v;
        ad::Tape t2;
        return t2.value(c.build(t2, t2.constant(a2), t2.constant(b)))[0];
      };
      const real fd = testing::central_difference(f, a[i], 1e-4);
      if (std::abs(grad[i]) > 1e-8)
        CHECK(testing::rel_err(grad[i], fd, 1e-8) < 1e-3);
    }
  }
}
