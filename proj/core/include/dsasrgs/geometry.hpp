// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file geometry.hpp
/// @brief Cone-beam (pinhole) projection geometry for C-arm style sweeps.
///
/// World units are millimeters. A view maps a world point to pixels via
/// P = K [R | t]. Pixel (i, j) covers [i, i+1) x [j, j+1), so its center sits
/// at (i + 0.5, j + 0.5); with that convention scaling the first two rows of K
/// by 1/4 gives exactly the geometry of a 4x4 box-downsampled image.
#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dsasrgs {

inline constexpr double kDepthEps = 1e-6;
inline constexpr double kCov2dFloor = 0.1;

struct CameraView {
  int view_id = 0;
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width_hr = 1;
  int height_hr = 1;
  double timestamp = 0.0;

  /// Source (camera center) position in world coordinates.
  Eigen::Vector3d center() const { return -R.transpose() * t; }
};

/// Throws InvalidConfig when R is not a proper rotation, K is not upper
/// triangular with positive focals, or the timestamp leaves [0, 1].
void validate_view(const CameraView& view);

/// Copy of `view` whose intrinsics address an image of `width` x `height`
/// covering the same field of view as the HR detector.
CameraView view_at_resolution(const CameraView& view, int width, int height);

struct ProjectedPoint {
  Eigen::Vector2d uv;
  double depth;
};

ProjectedPoint project_point(const Eigen::Vector3d& mu, const CameraView& view,
                             double depth_eps = kDepthEps);

/// EWA affine approximation J R Sigma R^T J^T, symmetrized, plus `floor` on
/// the diagonal.
Eigen::Matrix2d project_covariance(const Eigen::Matrix3d& sigma, const Eigen::Vector3d& mu,
                                   const CameraView& view, double floor = kCov2dFloor);

/// 2x3 Jacobian of the pixel coordinates w.r.t. the camera-frame point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Matrix3d& K,
                                                const Eigen::Vector3d& p_cam);

/// World-space unit direction of the ray through pixel coordinates (u, v).
Eigen::Vector3d pixel_ray_direction(const CameraView& view, double u, double v);

/// World point on the ray through (u, v) whose camera-frame depth is `depth`.
Eigen::Vector3d unproject(const CameraView& view, double u, double v, double depth);

struct DetectorParams {
  int width = 256;
  int height = 256;
  double source_to_detector_mm = 1200.0;
  double pixel_pitch_mm = 1.0;
};

enum class TimeMode { sweep, fixed };

struct Trajectory {
  std::vector<CameraView> views;
  double source_distance = 0.0;
  double detector_distance = 0.0;
};

/// Views evenly spaced on an arc around the world z axis, all looking at the
/// origin. A full 360 degree span does not repeat the first angle.
/// `angle_offset_degrees` shifts every view, `first_view_id` numbers them.
Trajectory make_circular_trajectory(int n_views, double span_degrees, double source_distance,
                                    const DetectorParams& detector, TimeMode time_mode,
                                    double angle_offset_degrees = 0.0, int first_view_id = 0);

std::string geometry_to_json(std::span<const CameraView> views);
std::vector<CameraView> geometry_from_json(const std::string& text);
void save_geometry(const std::filesystem::path& path, std::span<const CameraView> views);
std::vector<CameraView> load_geometry(const std::filesystem::path& path);

}  // namespace dsasrgs
