// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file scene.hpp
/// @brief Gaussian kernel set, its parameterization and running statistics.
///
/// Kernels carry geometry only. Their attenuation is always queried from the
/// attenuation field at the kernel center, so there is no per-kernel opacity.
#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace dsasrgs {

inline constexpr double kScaleMin = 1e-3;
inline constexpr double kScaleMax = 20.0;

struct GaussianKernel {
  std::array<float, 3> mu{};
  std::array<float, 3> log_scale{};
  std::array<float, 4> rot{1.0f, 0.0f, 0.0f, 0.0f};  // (w, x, y, z)

  Eigen::Vector3d mean() const { return {mu[0], mu[1], mu[2]}; }
};

/// Running accumulators between resets: projected-mean gradient norms for
/// densification and attenuation samples for pruning.
struct KernelStats {
  double grad_norm_sum = 0.0;
  std::int64_t grad_count = 0;
  double atten_sum = 0.0;
  std::int64_t atten_count = 0;
};

struct BoundingBox {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-50.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(50.0);

  Eigen::Vector3d extent() const { return hi - lo; }
  Eigen::Vector3d center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return extent().norm(); }
  bool degenerate() const { return !((hi - lo).minCoeff() > 0.0); }
  /// Box grown by `fraction` of its extent on every side.
  BoundingBox expanded(double fraction) const {
    const Eigen::Vector3d pad = fraction * extent();
    return {lo - pad, hi + pad};
  }
  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Eigen::Vector3d clamp(const Eigen::Vector3d& p) const {
    return p.cwiseMax(lo).cwiseMin(hi);
  }
};

struct Scene {
  std::vector<GaussianKernel> kernels;
  std::vector<KernelStats> stats;
  BoundingBox bbox;

  std::size_t size() const { return kernels.size(); }
  bool empty() const { return kernels.empty(); }
  /// Kernel means must stay inside the scene box grown by this fraction.
  static constexpr double kMeanMargin = 0.1;
};

Eigen::Matrix3d rotation_from_quaternion(const std::array<float, 4>& q);

/// Sigma = R(q) diag(exp(2 log_scale)) R(q)^T with q normalized internally.
Eigen::Matrix3d covariance_from_params(const std::array<float, 3>& log_scale,
                                       const std::array<float, 4>& rot);

inline Eigen::Matrix3d covariance(const GaussianKernel& k) {
  return covariance_from_params(k.log_scale, k.rot);
}

/// Clamps exp(log_scale) into [kScaleMin, kScaleMax], renormalizes the
/// quaternion and pulls the mean back inside the allowed box.
void sanitize_kernel(GaussianKernel& kernel, const BoundingBox& allowed);

struct SceneInitConfig {
  BoundingBox bbox;
  int n_init = 2000;
  /// Optional externally supplied seed points; when present they replace the
  /// uniform draw and n_init is ignored.
  std::optional<std::vector<Eigen::Vector3d>> seed_points;
};

Scene init_scene(const SceneInitConfig& config, std::uint64_t seed);

enum class StatsSelector { gradients, attenuation, both };

void reset_stats(Scene& scene, StatsSelector which);

/// Throws InvalidConfig when the parallel arrays disagree in length.
void check_scene(const Scene& scene);

}  // namespace dsasrgs
