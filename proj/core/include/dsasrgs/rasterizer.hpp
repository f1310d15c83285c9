// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file rasterizer.hpp
/// @brief Additive X-ray splatting, forward and backward.
///
/// I(p) = sum_i rho_i(t) * exp(-0.5 (p - m_i)^T S_i^{-1} (p - m_i)) with m_i and
/// S_i the projected mean and (floored) EWA covariance. No compositing, no
/// depth order, no normalization constant. Kernels are binned into square
/// tiles by the bounding box of their cutoff ellipse; every pixel of a tile
/// sums its bin in kernel-index order, so images are bit-identical for any
/// thread count.
#pragma once

#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/geometry.hpp"
#include "dsasrgs/image.hpp"
#include "dsasrgs/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace dsasrgs {

class ThreadPool;

struct RenderSettings {
  int tile_size = 16;
  /// Mahalanobis radius of the culling ellipse; infinity disables culling.
  double cutoff_sigma = 3.0;
  /// Optional worker pool; null renders on the calling thread.
  ThreadPool* pool = nullptr;
};

/// Per-kernel quantities produced by the projection step and reused by the
/// backward pass.
struct ProjectedKernel {
  bool visible = false;
  double u = 0.0, v = 0.0;        // projected mean, pixels
  double depth = 0.0;             // camera-frame z, mm
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;  // inverse of cov2d
  Eigen::Vector3d p_cam = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 2, 3> J = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix3d sigma3d = Eigen::Matrix3d::Identity();
  int tile_x0 = 0, tile_x1 = -1, tile_y0 = 0, tile_y1 = -1;
};

struct RenderState {
  CameraView view;  // intrinsics already at render resolution
  double t = 0.0;
  int width = 0;
  int height = 0;
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<float> rho;
  std::vector<ProjectedKernel> projected;
  /// CSR tile bins: kernels of tile k are bin_items[bin_offsets[k] .. bin_offsets[k+1]).
  std::vector<std::uint32_t> bin_offsets;
  std::vector<std::uint32_t> bin_items;
};

struct RenderResult {
  ProjectionImage image;
  std::vector<float> rho;
  RenderState state;
};

/// Evaluates rho_i(t) for every kernel, then splats.
RenderResult render(const Scene& scene, const AttenuationField& field, const CameraView& view,
                    double t, int width, int height, const RenderSettings& settings = {});

/// Splats with caller-supplied attenuations (one per kernel).
RenderResult render_with_rho(const Scene& scene, std::span<const float> rho, const CameraView& view,
                             double t, int width, int height, const RenderSettings& settings = {});

/// rho_i(t) for every kernel, evaluated at the kernel centers.
std::vector<float> evaluate_attenuations(const Scene& scene, const AttenuationField& field,
                                         double t, ThreadPool* pool = nullptr);

struct KernelGrads {
  std::vector<std::array<double, 3>> d_mu;
  std::vector<std::array<double, 3>> d_log_scale;
  std::vector<std::array<double, 4>> d_rot;
  std::vector<double> d_rho;
  /// ||dL/d(projected mean)||_2 with the mean in normalized image coordinates
  /// (pixels divided by the render width and height).
  std::vector<double> uv_grad_norm;
  /// 1 when the kernel was binned into at least one tile.
  std::vector<std::uint8_t> contributed;
  FieldGradBuffer field;
};

/// Exact gradients of sum_p d_image(p) * I(p). d_mu includes the path through
/// rho_i(t) = field(mu_i, t); field gradients land in KernelGrads::field.
KernelGrads render_backward(const Scene& scene, const AttenuationField& field,
                            const RenderState& state, std::span<const double> d_image,
                            int width, int height, const RenderSettings& settings = {});

/// Convenience form that re-runs the projection step first.
KernelGrads render_backward(const Scene& scene, const AttenuationField& field,
                            const CameraView& view, double t, std::span<const double> d_image,
                            int width, int height, const RenderSettings& settings = {});

/// Index of the kernel contributing most to pixel (x, y), or -1 when the
/// pixel's tile bin is empty.
int dominant_kernel(const RenderState& state, int x, int y);

/// grad_norm_sum += uv_grad_norm and grad_count += 1 for contributing kernels.
void accumulate_subpixel_grads(Scene& scene, const KernelGrads& grads);

/// atten_sum += rho and atten_count += 1 for every kernel.
void accumulate_attenuation(Scene& scene, std::span<const float> rho);

}  // namespace dsasrgs
