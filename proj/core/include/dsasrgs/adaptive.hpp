// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file adaptive.hpp
/// @brief Adaptive density control: cumulative-attenuation pruning,
/// sub-pixel-gradient driven splitting and residual-guided insertion.
///
/// Every structural edit can report a KernelRemap so callers holding
/// per-kernel state (optimizer moments) can follow the reordering.
#pragma once

#include "dsasrgs/geometry.hpp"
#include "dsasrgs/image.hpp"
#include "dsasrgs/scene.hpp"

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dsasrgs {

struct RenderState;

struct AdaptiveConfig {
  int window = 100;
  double prune_eps = 1e-6;
  double grad_threshold = 0.016;
  double eta_start = 1.0;
  double eta_end = 0.5;
  int k_children = 2;
  double offset_alpha = 1.0;
  double scale_beta = 0.6;
  double residual_quantile = 0.99;
  int residual_insert_cap = 32;
  std::size_t max_kernels = 100000;
};

void validate(const AdaptiveConfig& cfg);

/// For each kernel after an edit, the index it had before, or -1 if new.
using KernelRemap = std::vector<std::int64_t>;

using Rng = std::mt19937_64;

/// atten_sum / atten_count; throws NoSamples when the count is zero.
double mean_attenuation(const KernelStats& stats);

/// Removes kernels whose mean attenuation is strictly below prune_eps, then
/// zeroes the attenuation stats of the survivors. Kernels without samples
/// are kept. Returns the number removed.
std::size_t prune(Scene& scene, const AdaptiveConfig& cfg, KernelRemap* remap = nullptr);

/// Linear decay from eta_start at iteration 0 to eta_end at max_iter.
double densify_decay(const AdaptiveConfig& cfg, int iter, int max_iter);

/// Kernels whose mean projected-gradient norm exceeds grad_threshold * eta(iter).
std::vector<std::size_t> select_densify(const Scene& scene, const AdaptiveConfig& cfg, int iter,
                                        int max_iter);

/// k_children kernels around `parent`: offsets drawn from N(0, alpha * Sigma),
/// scales multiplied by scale_beta (then clamped), rotation inherited.
std::vector<GaussianKernel> split_kernel(const GaussianKernel& parent, const AdaptiveConfig& cfg,
                                         Rng& rng);

struct DensifyResult {
  std::size_t split = 0;
  std::size_t skipped_cap = 0;
};

/// Replaces each selected kernel by its children. Survivors keep their order,
/// children are appended parent by parent with zeroed stats. A split that
/// would exceed max_kernels is skipped and counted.
DensifyResult densify(Scene& scene, std::span<const std::size_t> selected,
                      const AdaptiveConfig& cfg, Rng& rng, KernelRemap* remap = nullptr);

struct InsertResult {
  std::size_t inserted = 0;
  std::size_t skipped_cap = 0;
};

/// Adds small kernels on the rays of pixels whose residual lies above the
/// residual_quantile, at most residual_insert_cap of them. Depth comes from
/// the pixel's dominant kernel in `state` (when given and matching the
/// residual's dims), otherwise from the ray's closest approach to the scene
/// center.
InsertResult residual_guided_insert(Scene& scene, const ProjectionImage& residual,
                                    const CameraView& view, const AdaptiveConfig& cfg, Rng& rng,
                                    const RenderState* state = nullptr,
                                    KernelRemap* remap = nullptr);

}  // namespace dsasrgs
