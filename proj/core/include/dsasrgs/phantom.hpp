// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file phantom.hpp
/// @brief Synthetic dynamic vessel phantom with exact X-ray projections.
///
/// The phantom is a Gaussian mixture laid along a binary branching tree, so
/// the line integral through every blob has a closed form. Contrast arrives
/// at each blob with a delay proportional to its path length from the root
/// and follows a gamma-variate curve afterwards.
#pragma once

#include "dsasrgs/geometry.hpp"
#include "dsasrgs/image.hpp"
#include "dsasrgs/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace dsasrgs {

struct PhantomBlob {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Identity();
  int branch_id = 0;
  double arrival = 0.0;
};

struct BolusParams {
  double peak_scale = 1.0;
  double shape = 3.0;
  double decay = 0.15;
};

void validate(const BolusParams& params);

/// 0 before arrival, else a * (s / (k tau))^k * exp(k - s / tau) with
/// s = t - arrival; peaks at exactly a when s = k tau.
double bolus_curve(double t, double arrival, const BolusParams& params);

/// Closed-form integral of bolus_curve over [arrival, inf):
/// a * tau * e^k * Gamma(k + 1) / k^k.
double bolus_integral(const BolusParams& params);

struct PhantomConfig {
  int n_branches = 15;
  int blobs_per_branch = 8;
  BoundingBox bbox;
  double root_radius = 2.0;
  /// Normalized time for the contrast front to cover the whole tree.
  double propagation_time = 0.5;
};

std::vector<PhantomBlob> generate_phantom(std::uint64_t seed, const PhantomConfig& config);

/// Convenience overload with default radius and propagation time.
std::vector<PhantomBlob> generate_phantom(std::uint64_t seed, int n_branches, int blobs_per_branch,
                                          const BoundingBox& bbox);

/// Integral of exp(-0.5 q(o + s d)) over the whole line, d a unit vector.
double gaussian_line_integral(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                              const Eigen::Vector3d& mu, const Eigen::Matrix3d& sigma_inv);

/// Sparse per-blob footprint on the detector: line integral per pixel.
struct BlobFootprint {
  std::vector<std::uint32_t> pixel;
  std::vector<float> value;
};

/// Footprints of every blob at the given view and resolution. Pixels farther
/// than 8 projected standard deviations (plus 2 px) from the projected center
/// are skipped; the neglected mass there is below 1e-13 of the peak.
std::vector<BlobFootprint> analytic_footprints(std::span<const PhantomBlob> blobs,
                                               const CameraView& view, int width, int height);

/// Exact line-integral image sum_b c_b(t) * integral of blob b along each pixel ray.
ProjectionImage analytic_project(std::span<const PhantomBlob> blobs, const BolusParams& bolus,
                                 const CameraView& view, double t, int width, int height);

}  // namespace dsasrgs
