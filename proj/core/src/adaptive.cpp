// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/adaptive.hpp"

#include "dsasrgs/errors.hpp"
#include "dsasrgs/rasterizer.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace dsasrgs {

void validate(const AdaptiveConfig& cfg) {
  if (cfg.window < 1 || !(cfg.prune_eps > 0.0) || !(cfg.scale_beta > 0.0 && cfg.scale_beta < 1.0) ||
      !(cfg.eta_end > 0.0 && cfg.eta_end <= cfg.eta_start) || cfg.k_children < 1 ||
      !(cfg.offset_alpha >= 0.0) || !(cfg.residual_quantile >= 0.0 && cfg.residual_quantile <= 1.0) ||
      cfg.residual_insert_cap < 0 || cfg.max_kernels < 1 || !(cfg.grad_threshold >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid adaptive control configuration");
  }
}

double mean_attenuation(const KernelStats& stats) {
  if (stats.atten_count <= 0) throw Error(ErrorCode::NoSamples, "no attenuation samples since reset");
  return stats.atten_sum / static_cast<double>(stats.atten_count);
}

std::size_t prune(Scene& scene, const AdaptiveConfig& cfg, KernelRemap* remap) {
  check_scene(scene);
  std::vector<std::uint8_t> keep(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    // Kernels born since the last reset have no samples and cannot be judged yet.
    keep[i] = scene.stats[i].atten_count == 0 || !(mean_attenuation(scene.stats[i]) < cfg.prune_eps);
  }
  Scene out;
  out.bbox = scene.bbox;
  KernelRemap map;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!keep[i]) continue;
    out.kernels.push_back(scene.kernels[i]);
    KernelStats s = scene.stats[i];
    s.atten_sum = 0.0;
    s.atten_count = 0;
    out.stats.push_back(s);
    map.push_back(static_cast<std::int64_t>(i));
  }
  const std::size_t removed = scene.size() - out.size();
  scene = std::move(out);
  if (remap) *remap = std::move(map);
  return removed;
}

double densify_decay(const AdaptiveConfig& cfg, int iter, int max_iter) {
  if (max_iter <= 0) return cfg.eta_start;
  const double frac = std::clamp(static_cast<double>(iter) / max_iter, 0.0, 1.0);
  return cfg.eta_start + (cfg.eta_end - cfg.eta_start) * frac;
}

std::vector<std::size_t> select_densify(const Scene& scene, const AdaptiveConfig& cfg, int iter,
                                        int max_iter) {
  check_scene(scene);
  const double threshold = cfg.grad_threshold * densify_decay(cfg, iter, max_iter);
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& s = scene.stats[i];
    if (s.grad_count <= 0) continue;
    if (s.grad_norm_sum / static_cast<double>(s.grad_count) > threshold) selected.push_back(i);
  }
  return selected;
}

std::vector<GaussianKernel> split_kernel(const GaussianKernel& parent, const AdaptiveConfig& cfg,
                                         Rng& rng) {
  const Eigen::Matrix3d cov = cfg.offset_alpha * covariance(parent);
  Eigen::Matrix3d L = Eigen::Matrix3d::Zero();
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    L = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  static const float kLogMin = static_cast<float>(std::log(kScaleMin));
  static const float kLogMax = static_cast<float>(std::log(kScaleMax));
  const float log_beta = static_cast<float>(std::log(cfg.scale_beta));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<GaussianKernel> children;
  children.reserve(cfg.k_children);
  for (int k = 0; k < cfg.k_children; ++k) {
    Eigen::Vector3d z;
    for (int d = 0; d < 3; ++d) z[d] = normal(rng);
    const Eigen::Vector3d offset = L * z;
    GaussianKernel child = parent;
    for (int d = 0; d < 3; ++d) {
      child.mu[d] = static_cast<float>(parent.mu[d] + offset[d]);
      child.log_scale[d] = std::clamp(parent.log_scale[d] + log_beta, kLogMin, kLogMax);
    }
    children.push_back(child);
  }
  return children;
}

DensifyResult densify(Scene& scene, std::span<const std::size_t> selected,
                      const AdaptiveConfig& cfg, Rng& rng, KernelRemap* remap) {
  check_scene(scene);
  DensifyResult result;
  std::vector<std::uint8_t> split(scene.size(), 0);
  std::vector<std::pair<std::size_t, std::vector<GaussianKernel>>> families;
  std::size_t count = scene.size();
  const std::size_t growth = static_cast<std::size_t>(cfg.k_children) - 1;
  for (std::size_t idx : selected) {
    if (idx >= scene.size() || split[idx]) continue;
    if (count + growth > cfg.max_kernels) {
      ++result.skipped_cap;
      continue;
    }
    split[idx] = 1;
    count += growth;
    families.emplace_back(idx, split_kernel(scene.kernels[idx], cfg, rng));
  }
  if (result.skipped_cap > 0) {
    spdlog::debug("densify: {} splits skipped at the kernel cap ({})", result.skipped_cap,
                  cfg.max_kernels);
  }

  const BoundingBox allowed = scene.bbox.expanded(Scene::kMeanMargin);
  Scene out;
  out.bbox = scene.bbox;
  KernelRemap map;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (split[i]) continue;
    out.kernels.push_back(scene.kernels[i]);
    out.stats.push_back(scene.stats[i]);
    map.push_back(static_cast<std::int64_t>(i));
  }
  for (auto& [parent, children] : families) {
    for (auto& child : children) {
      sanitize_kernel(child, allowed);
      out.kernels.push_back(child);
      out.stats.push_back(KernelStats{});
      map.push_back(-1);
    }
  }
  result.split = families.size();
  scene = std::move(out);
  if (remap) *remap = std::move(map);
  return result;
}

InsertResult residual_guided_insert(Scene& scene, const ProjectionImage& residual,
                                    const CameraView& view, const AdaptiveConfig& cfg, Rng& rng,
                                    const RenderState* state, KernelRemap* remap) {
  check_scene(scene);
  InsertResult result;
  KernelRemap map(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) map[i] = static_cast<std::int64_t>(i);
  if (residual.size() == 0 || cfg.residual_insert_cap == 0) {
    if (remap) *remap = std::move(map);
    return result;
  }

  std::vector<float> sorted = residual.pixels;
  const std::size_t rank = std::min(
      sorted.size() - 1,
      static_cast<std::size_t>(std::max(0.0, std::ceil(cfg.residual_quantile * sorted.size()) - 1.0)));
  std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
  const float threshold = sorted[rank];

  std::vector<std::uint32_t> candidates;
  for (std::uint32_t i = 0; i < residual.size(); ++i) {
    if (residual.pixels[i] > threshold) candidates.push_back(i);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  if (candidates.size() > static_cast<std::size_t>(cfg.residual_insert_cap)) {
    candidates.resize(cfg.residual_insert_cap);
  }

  double scale = scene.bbox.diagonal() / 100.0;
  if (!scene.empty()) {
    std::vector<double> scales;
    scales.reserve(scene.size());
    for (const auto& k : scene.kernels) {
      scales.push_back(std::exp((static_cast<double>(k.log_scale[0]) + k.log_scale[1] + k.log_scale[2]) / 3.0));
    }
    std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
    scale = scales[scales.size() / 2];
  }
  const float log_scale = static_cast<float>(std::log(std::clamp(0.5 * scale, kScaleMin, kScaleMax)));

  const CameraView v = view_at_resolution(view, residual.width, residual.height);
  const bool use_state = state && state->width == residual.width && state->height == residual.height &&
                         state->projected.size() == scene.size();
  const BoundingBox allowed = scene.bbox.expanded(Scene::kMeanMargin);
  for (std::uint32_t pix : candidates) {
    if (scene.size() + 1 > cfg.max_kernels) {
      ++result.skipped_cap;
      continue;
    }
    const int x = static_cast<int>(pix % residual.width);
    const int y = static_cast<int>(pix / residual.width);
    const double u = x + 0.5;
    const double w = y + 0.5;
    double depth = -1.0;
    if (use_state) {
      const int best = dominant_kernel(*state, x, y);
      if (best >= 0) depth = state->projected[best].depth;
    }
    if (!(depth > kDepthEps)) {
      const Eigen::Vector3d o = v.center();
      const Eigen::Vector3d d = pixel_ray_direction(v, u, w);
      const Eigen::Vector3d closest = o + d * (scene.bbox.center() - o).dot(d);
      depth = (v.R * closest + v.t).z();
    }
    if (!(depth > kDepthEps)) continue;
    GaussianKernel k;
    const Eigen::Vector3d p = unproject(v, u, w, depth);
    for (int d = 0; d < 3; ++d) k.mu[d] = static_cast<float>(p[d]);
    k.log_scale = {log_scale, log_scale, log_scale};
    k.rot = {1.0f, 0.0f, 0.0f, 0.0f};
    sanitize_kernel(k, allowed);
    scene.kernels.push_back(k);
    scene.stats.push_back(KernelStats{});
    map.push_back(-1);
    ++result.inserted;
  }
  if (result.skipped_cap > 0) {
    spdlog::debug("residual insert: {} insertions skipped at the kernel cap", result.skipped_cap);
  }
  if (remap) *remap = std::move(map);
  return result;
}

}  // namespace dsasrgs
