// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/scene.hpp"

#include "dsasrgs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dsasrgs {

Eigen::Matrix3d rotation_from_quaternion(const std::array<float, 4>& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n > 0.0) {
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  } else {
    w = 1.0;
  }
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Eigen::Matrix3d covariance_from_params(const std::array<float, 3>& log_scale,
                                       const std::array<float, 4>& rot) {
  const Eigen::Matrix3d R = rotation_from_quaternion(rot);
  Eigen::Matrix3d M;
  for (int c = 0; c < 3; ++c) M.col(c) = R.col(c) * std::exp(static_cast<double>(log_scale[c]));
  Eigen::Matrix3d sigma = M * M.transpose();
  return 0.5 * (sigma + sigma.transpose());
}

void sanitize_kernel(GaussianKernel& kernel, const BoundingBox& allowed) {
  static const float kLogMin = static_cast<float>(std::log(kScaleMin));
  static const float kLogMax = static_cast<float>(std::log(kScaleMax));
  for (auto& s : kernel.log_scale) s = std::clamp(s, kLogMin, kLogMax);

  auto& q = kernel.rot;
  const double n = std::sqrt(static_cast<double>(q[0]) * q[0] + static_cast<double>(q[1]) * q[1] +
                             static_cast<double>(q[2]) * q[2] + static_cast<double>(q[3]) * q[3]);
  if (n > 1e-12 && std::isfinite(n)) {
    for (auto& c : q) c = static_cast<float>(c / n);
  } else {
    q = {1.0f, 0.0f, 0.0f, 0.0f};
  }

  for (int d = 0; d < 3; ++d) {
    kernel.mu[d] = std::clamp(kernel.mu[d], static_cast<float>(allowed.lo[d]),
                              static_cast<float>(allowed.hi[d]));
  }
}

Scene init_scene(const SceneInitConfig& config, std::uint64_t seed) {
  if (config.bbox.degenerate()) throw Error(ErrorCode::InvalidConfig, "scene bbox is degenerate");
  const bool from_points = config.seed_points.has_value();
  const std::size_t n = from_points ? config.seed_points->size() : static_cast<std::size_t>(std::max(config.n_init, 0));
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "scene needs at least one initial kernel");

  Scene scene;
  scene.bbox = config.bbox;
  scene.kernels.resize(n);
  scene.stats.assign(n, KernelStats{});

  const double scale = config.bbox.diagonal() / std::cbrt(static_cast<double>(n)) / 4.0;
  const float log_scale = static_cast<float>(std::log(std::clamp(scale, kScaleMin, kScaleMax)));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const BoundingBox allowed = config.bbox.expanded(Scene::kMeanMargin);
  for (std::size_t i = 0; i < n; ++i) {
    auto& k = scene.kernels[i];
    Eigen::Vector3d p;
    if (from_points) {
      p = (*config.seed_points)[i];
    } else {
      for (int d = 0; d < 3; ++d) p[d] = config.bbox.lo[d] + unit(rng) * config.bbox.extent()[d];
    }
    p = allowed.clamp(p);
    for (int d = 0; d < 3; ++d) k.mu[d] = static_cast<float>(p[d]);
    k.log_scale = {log_scale, log_scale, log_scale};
    k.rot = {1.0f, 0.0f, 0.0f, 0.0f};
  }
  return scene;
}

void reset_stats(Scene& scene, StatsSelector which) {
  for (auto& s : scene.stats) {
    if (which != StatsSelector::attenuation) {
      s.grad_norm_sum = 0.0;
      s.grad_count = 0;
    }
    if (which != StatsSelector::gradients) {
      s.atten_sum = 0.0;
      s.atten_count = 0;
    }
  }
}

void check_scene(const Scene& scene) {
  if (scene.kernels.size() != scene.stats.size()) {
    throw Error(ErrorCode::InvalidConfig, "scene kernels/stats length mismatch");
  }
}

}  // namespace dsasrgs
