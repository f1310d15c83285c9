// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "oracles.hpp"

#include "dsasrgs/errors.hpp"
#include "dsasrgs/supervision.hpp"
#include "dsasrgs/trainer.hpp"

#include <doctest.h>

#include <random>

using namespace dsasrgs;

namespace {

ProjectionImage random_image(std::mt19937_64& rng, int w, int h, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  ProjectionImage img(w, h);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

std::vector<double> as_double(const ProjectionImage& img) { return {img.pixels.begin(), img.pixels.end()}; }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("supervision") {

TEST_CASE("resampling preserves constants") {
  const ProjectionImage c(16, 12, ImageRole::lr_obs, 0.375f);
  const ProjectionImage up = upsample_bicubic(c);
  CHECK(up.width == 64);
  CHECK(up.height == 48);
  for (float p : up.pixels) CHECK(p == 0.375f);
  const ProjectionImage down = downsample_area(up);
  for (float p : down.pixels) CHECK(p == 0.375f);
}

TEST_CASE("area downsampling is the 4x4 block mean") {
  std::mt19937_64 rng(1);
  const ProjectionImage img = random_image(rng, 64, 64);
  const ProjectionImage d = downsample_area(img);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) {
        for (int i = 0; i < 4; ++i) s += img.at(4 * x + i, 4 * y + j);
      }
      CHECK(std::abs(d.at(x, y) - s / 16.0) <= 1e-7);
    }
  }
  CHECK_THROWS_AS(downsample_area(ProjectionImage(10, 8)), Error);
}

TEST_CASE("SSIM identities and the windowed-loop reference") {
  std::mt19937_64 rng(2);
  const ProjectionImage a = random_image(rng, 16, 16);
  const ProjectionImage b = random_image(rng, 16, 16);
  CHECK(ssim_mean(a, a) == 1.0);
  CHECK(std::abs(ssim_mean(a, b) - ssim_mean(b, a)) <= 1e-9);
  const auto va = as_double(a), vb = as_double(b);
  CHECK(std::abs(ssim_mean(a, b) - oracle::windowed_ssim(va, vb, 16, 16)) <= 1e-6);

  ProjectionImage c = a;
  for (auto& p : c.pixels) p = 0.8f * p + 0.1f;
  CHECK(std::abs(ssim_mean(a, c) - oracle::windowed_ssim(va, as_double(c), 16, 16)) <= 1e-6);
}

TEST_CASE("SSIM gradient matches central differences") {
  std::mt19937_64 rng(3);
  const ProjectionImage a = random_image(rng, 16, 16);
  const ProjectionImage b = random_image(rng, 16, 16);
  std::vector<double> va = as_double(a);
  const std::vector<double> vb = as_double(b);
  const SsimWithGrad g = ssim_mean_with_grad(va, vb, 16, 16);
  for (std::size_t i = 0; i < va.size(); i += 7) {
    const double orig = va[i];
    va[i] = orig + 1e-6;
    const double up = ssim_mean_with_grad(va, vb, 16, 16).value;
    va[i] = orig - 1e-6;
    const double dn = ssim_mean_with_grad(va, vb, 16, 16).value;
    va[i] = orig;
    const double num = (up - dn) / 2e-6;
    CHECK(std::abs(num - g.grad_a[i]) <= 1e-3 * std::max(std::abs(num), 1e-3));
  }
}

TEST_CASE("fidelity losses: zero at identity, weighting, and gradients") {
  std::mt19937_64 rng(4);
  const ProjectionImage hr = random_image(rng, 16, 16);
  const ProjectionImage teach = random_image(rng, 16, 16);
  LossConfig cfg;
  CHECK(loss_sr(hr, hr, cfg).value == 0.0);
  CHECK(loss_gt(hr, downsample_area(hr), cfg).value <= 1e-7);

  const LossValue v = loss_sr(hr, teach, cfg);
  CHECK(v.value == doctest::Approx(0.8 * v.l1 + 0.2 * (1.0 - v.ssim)));

  // Central differences through loss_gt on the HR input.
  const ProjectionImage lr = random_image(rng, 4, 4);
  const LossValue g = loss_gt(hr, lr, cfg);
  ProjectionImage x = hr;
  for (std::size_t i = 0; i < x.size(); i += 5) {
    const float orig = x.pixels[i];
    x.pixels[i] = orig + 1e-3f;
    const double up = loss_gt(x, lr, cfg).value;
    const double hu = static_cast<double>(x.pixels[i]) - orig;
    x.pixels[i] = orig - 1e-3f;
    const double dn = loss_gt(x, lr, cfg).value;
    const double hd = orig - static_cast<double>(x.pixels[i]);
    x.pixels[i] = orig;
    const double num = (up - dn) / (hu + hd);
    CHECK(std::abs(num - g.grad[i]) <= 1e-3 * std::max(std::abs(num), 1e-4));
  }
}

TEST_CASE("total loss arithmetic") {
  LossConfig cfg;
  CHECK(total_loss(1.0, 1.0, cfg) == doctest::Approx(1.4));
  LossConfig off = cfg;
  off.mf_weight = 0.0;
  CHECK(total_loss(0.3, 5.0, off) == 0.3);
  CHECK(total_loss(0.4, 1.0, cfg) > total_loss(0.3, 1.0, cfg));
  CHECK(total_loss(0.3, 1.1, cfg) > total_loss(0.3, 1.0, cfg));
}

TEST_CASE("texture richness") {
  const ProjectionImage flat(32, 32, ImageRole::sr, 0.4f);
  for (float p : texture_richness(flat).pixels) CHECK(p == 0.0f);

  ProjectionImage step(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 16; x < 32; ++x) step.at(x, y) = 1.0f;
  }
  const ProjectionImage t = texture_richness(step);
  for (float p : t.pixels) {
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
  int best_x = 0;
  for (int x = 0; x < 32; ++x) {
    if (t.at(x, 10) > t.at(best_x, 10)) best_x = x;
  }
  CHECK(std::abs(best_x - 15.5) <= 7);
}

TEST_CASE("confidence map cases") {
  std::mt19937_64 rng(5);
  const ProjectionImage a = random_image(rng, 24, 24);
  const ProjectionImage b = random_image(rng, 24, 24);
  ConfidenceConfig zero;
  zero.alpha_c = 0.0;
  zero.beta_c = 0.0;
  for (float c : confidence_map(a, b, zero).pixels) CHECK(c == 0.5f);

  const ProjectionImage k(24, 24, ImageRole::sr, 0.25f);
  ConfidenceConfig cfg;
  for (float c : confidence_map(k, k, cfg).pixels) CHECK(c == static_cast<float>(logistic(cfg.alpha_c)));

  // Composition of the published primitives.
  const ProjectionImage s = ssim_map(a, b, cfg.ssim());
  const ProjectionImage t = texture_richness(a, cfg);
  const ProjectionImage c = confidence_map(a, b, cfg);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c.pixels[i] == doctest::Approx(logistic(cfg.alpha_c * s.pixels[i] + cfg.beta_c * t.pixels[i])).epsilon(1e-6));
  }
}

TEST_CASE("teaching image endpoints and convexity") {
  std::mt19937_64 rng(6);
  const ProjectionImage sr = random_image(rng, 16, 16);
  const ProjectionImage up = random_image(rng, 16, 16);
  CHECK(teaching_image(sr, up, ProjectionImage(16, 16, ImageRole::generic, 1.0f)).pixels == sr.pixels);
  CHECK(teaching_image(sr, up, ProjectionImage(16, 16, ImageRole::generic, 0.0f)).pixels == up.pixels);
  const ProjectionImage c = random_image(rng, 16, 16);
  const ProjectionImage t = teaching_image(sr, up, c);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(t.pixels[i] >= std::min(sr.pixels[i], up.pixels[i]));
    CHECK(t.pixels[i] <= std::max(sr.pixels[i], up.pixels[i]));
  }
}

TEST_CASE("SR providers") {
  const BicubicSharpenProvider sharpen;
  const ProjectionImage flat(8, 8, ImageRole::lr_obs, 0.6f);
  for (float p : sr_apply(sharpen, flat).pixels) CHECK(p == doctest::Approx(0.6f).epsilon(1e-6));
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int w = 3 + trial * 2, h = 5 + trial;
    const ProjectionImage out = sr_apply(sharpen, random_image(rng, w, h));
    CHECK(out.width == 4 * w);
    CHECK(out.height == 4 * h);
  }

  oracle::TempDir dir("dsasrgs_sr");
  const ProjectionImage stored = random_image(rng, 32, 32);
  write_pfm(dir.path() / frame_file_name(3, 7), stored);
  const FileIngestProvider files(dir.path());
  CHECK(sr_apply(files, ProjectionImage(8, 8), 3, 7).pixels == stored.pixels);
  try {
    sr_apply(files, ProjectionImage(8, 8), 3, 8);
    FAIL("expected MissingPseudoLabel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPseudoLabel);
  }
}

TEST_CASE("PSNR arithmetic") {
  const ProjectionImage zero(8, 8);
  const ProjectionImage half(8, 8, ImageRole::generic, 0.5f);
  CHECK(std::abs(psnr(zero, half) - 6.020599913279624) <= 1e-4);
  CHECK(psnr(half, half) == kPsnrCap);

  std::mt19937_64 rng(8);
  const ProjectionImage a = random_image(rng, 16, 16);
  const ProjectionImage b = random_image(rng, 16, 16);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(1.0 / mse)) <= 1e-9);
}

}  // TEST_SUITE
