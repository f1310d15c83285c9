// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "oracles.hpp"

#include "dsasrgs/adaptive.hpp"
#include "dsasrgs/errors.hpp"
#include "dsasrgs/rasterizer.hpp"

#include <doctest.h>

#include <random>

using namespace dsasrgs;

namespace {

Scene scene_with_stats(std::mt19937_64& rng, std::size_t n) {
  Scene s = oracle::random_scene(rng, static_cast<int>(n), 30.0, 1.0, 5.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& st : s.stats) {
    st.atten_count = 1 + static_cast<std::int64_t>(u(rng) * 50);
    st.atten_sum = u(rng) < 0.3 ? 0.0 : std::pow(10.0, -8.0 + 6.0 * u(rng)) * st.atten_count;
    st.grad_count = static_cast<std::int64_t>(u(rng) * 50);
    st.grad_norm_sum = 0.04 * u(rng) * st.grad_count;
  }
  return s;
}

}  // namespace

TEST_SUITE("adaptive") {

TEST_CASE("mean attenuation") {
  KernelStats s;
  s.atten_sum = 1.5;
  s.atten_count = 3;
  CHECK(mean_attenuation(s) == 0.5);
  s.atten_sum = 0.0;
  s.atten_count = 2;
  CHECK(mean_attenuation(s) == 0.0);
  CHECK_THROWS_AS(mean_attenuation(KernelStats{}), Error);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Scene sc;
  sc.kernels.resize(1);
  sc.stats.resize(1);
  double explicit_sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::vector<float> rho{u(rng)};
    explicit_sum += rho[0];
    accumulate_attenuation(sc, rho);
  }
  CHECK(std::abs(mean_attenuation(sc.stats[0]) - explicit_sum / 100) <= 1e-7);
}

TEST_CASE("prune boundary: zero mean is pruned, exactly eps is kept") {
  Scene s;
  s.kernels.resize(3);
  s.stats.resize(3);
  s.stats[0] = {0, 0, 0.0, 4};
  s.stats[1] = {0, 0, 1e-6, 1};
  s.stats[2] = {0, 0, 0.0, 0};  // born this window
  KernelRemap remap;
  CHECK(prune(s, AdaptiveConfig{}, &remap) == 1);
  CHECK(remap == KernelRemap{1, 2});
  for (const auto& st : s.stats) CHECK(st.atten_count == 0);
}

TEST_CASE("prune and densify sets equal brute-force filters") {
  std::mt19937_64 rng(2);
  AdaptiveConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    Scene s = scene_with_stats(rng, 300);
    const auto stats = s.stats;
    const auto selected = select_densify(s, cfg, 1000, 3000);
    CHECK(selected == oracle::brute_densify(stats, cfg.grad_threshold * densify_decay(cfg, 1000, 3000)));

    KernelRemap remap;
    prune(s, cfg, &remap);
    const auto expect = oracle::brute_prune_survivors(stats, cfg.prune_eps);
    REQUIRE(remap.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(remap[i] == static_cast<std::int64_t>(expect[i]));
  }
}

TEST_CASE("densify threshold arithmetic and decay endpoints") {
  Scene s;
  s.kernels.resize(2);
  s.stats.resize(2);
  s.stats[0].grad_norm_sum = 0.02 * 10;
  s.stats[0].grad_count = 10;
  s.stats[1].grad_count = 10;
  AdaptiveConfig cfg;
  CHECK(select_densify(s, cfg, 0, 3000) == std::vector<std::size_t>{0});
  CHECK(densify_decay(cfg, 0, 3000) == 1.0);
  CHECK(densify_decay(cfg, 3000, 3000) == 0.5);
  AdaptiveConfig strict = cfg;
  strict.grad_threshold = 0.03;
  CHECK(select_densify(s, strict, 0, 3000).empty());
}

TEST_CASE("children scales are beta times the parent") {
  GaussianKernel parent;
  parent.log_scale = {0.0f, 0.0f, 0.0f};
  AdaptiveConfig cfg;
  Rng rng(3);
  const auto kids = split_kernel(parent, cfg, rng);
  REQUIRE(kids.size() == 2);
  for (const auto& k : kids) {
    for (float ls : k.log_scale) CHECK(std::exp(ls) == doctest::Approx(0.6).epsilon(1e-6));
  }

  AdaptiveConfig tiny = cfg;
  tiny.offset_alpha = 0.0;
  for (const auto& k : split_kernel(parent, tiny, rng)) CHECK(k.mu == parent.mu);
}

TEST_CASE("offset covariance matches alpha times sigma") {
  GaussianKernel parent;
  parent.log_scale = {std::log(3.0f), std::log(1.0f), std::log(0.5f)};
  parent.rot = {0.8f, 0.2f, -0.4f, 0.4f};
  AdaptiveConfig cfg;
  cfg.offset_alpha = 0.7;
  cfg.k_children = 1;
  Rng rng(4);
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d d = split_kernel(parent, cfg, rng)[0].mean() - parent.mean();
    acc += d * d.transpose();
  }
  const Eigen::Matrix3d expect = cfg.offset_alpha * oracle::kernel_covariance(parent);
  CHECK((acc / n - expect).norm() <= 0.05 * expect.norm());
}

TEST_CASE("densify replaces parents and respects the kernel cap") {
  std::mt19937_64 rng(5);
  Scene s = oracle::random_scene(rng, 10, 20.0, 1.0, 3.0);
  AdaptiveConfig cfg;
  Rng r(5);
  KernelRemap remap;
  const std::vector<std::size_t> sel{1, 4};
  const auto res = densify(s, sel, cfg, r, &remap);
  CHECK(res.split == 2);
  CHECK(s.size() == 12);
  CHECK(std::count(remap.begin(), remap.end(), -1) == 4);

  cfg.max_kernels = 12;
  const std::vector<std::size_t> sel2{0};
  const auto capped = densify(s, sel2, cfg, r, &remap);
  CHECK(capped.split == 0);
  CHECK(capped.skipped_cap == 1);
  CHECK(s.size() == 12);
}

TEST_CASE("residual insertion") {
  Scene s;
  s.bbox.lo = Eigen::Vector3d::Constant(-50);
  s.bbox.hi = Eigen::Vector3d::Constant(50);
  const CameraView v = oracle::frontal_view(32, 32, 200, 500);
  AdaptiveConfig cfg;
  Rng rng(6);

  ProjectionImage zero(32, 32);
  CHECK(residual_guided_insert(s, zero, v, cfg, rng).inserted == 0);

  ProjectionImage hot(32, 32);
  hot.at(20, 9) = 1.0f;
  CHECK(residual_guided_insert(s, hot, v, cfg, rng).inserted == 1);
  REQUIRE(s.size() == 1);
  const auto p = project_point(s.kernels[0].mean(), v);
  CHECK(std::abs(p.uv.x() - 20.5) <= 0.5);
  CHECK(std::abs(p.uv.y() - 9.5) <= 0.5);

  ProjectionImage noisy(32, 32);
  std::mt19937_64 g(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& x : noisy.pixels) x = u(g);
  cfg.residual_quantile = 0.5;
  const std::size_t before = s.size();
  CHECK(residual_guided_insert(s, noisy, v, cfg, rng).inserted == static_cast<std::size_t>(cfg.residual_insert_cap));
  CHECK(s.size() == before + cfg.residual_insert_cap);
}

TEST_CASE("config validation") {
  AdaptiveConfig c;
  c.scale_beta = 1.0;
  CHECK_THROWS_AS(validate(c), Error);
  c = {};
  c.eta_end = 2.0;
  CHECK_THROWS_AS(validate(c), Error);
  c = {};
  c.prune_eps = 0.0;
  CHECK_THROWS_AS(validate(c), Error);
}

}  // TEST_SUITE
