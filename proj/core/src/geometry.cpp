// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/geometry.hpp"

#include "dsasrgs/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dsasrgs {

void validate_view(const CameraView& view) {
  const Eigen::Matrix3d ortho = view.R.transpose() * view.R - Eigen::Matrix3d::Identity();
  if (ortho.cwiseAbs().maxCoeff() > 1e-5 || view.R.determinant() <= 0.0) {
    throw Error(ErrorCode::InvalidConfig,
                "view " + std::to_string(view.view_id) + ": R is not a proper rotation");
  }
  const auto& K = view.K;
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || !(K(0, 0) > 0.0) ||
      !(K(1, 1) > 0.0)) {
    throw Error(ErrorCode::InvalidConfig,
                "view " + std::to_string(view.view_id) +
                    ": K must be upper triangular with positive focal lengths");
  }
  if (!(view.timestamp >= 0.0 && view.timestamp <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig,
                "view " + std::to_string(view.view_id) + ": timestamp outside [0, 1]");
  }
  if (view.width_hr < 1 || view.height_hr < 1) {
    throw Error(ErrorCode::InvalidConfig, "view " + std::to_string(view.view_id) +
                                              ": image dimensions must be positive");
  }
}

CameraView view_at_resolution(const CameraView& view, int width, int height) {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::InvalidConfig, "render resolution must be positive");
  }
  CameraView out = view;
  if (width == view.width_hr && height == view.height_hr) return out;
  const double sx = static_cast<double>(width) / view.width_hr;
  const double sy = static_cast<double>(height) / view.height_hr;
  out.K.row(0) *= sx;
  out.K.row(1) *= sy;
  out.width_hr = width;
  out.height_hr = height;
  return out;
}

ProjectedPoint project_point(const Eigen::Vector3d& mu, const CameraView& view,
                             double depth_eps) {
  const Eigen::Vector3d p_cam = view.R * mu + view.t;
  if (!(p_cam.z() > depth_eps)) {
    throw Error(ErrorCode::BehindCamera, "point depth " + std::to_string(p_cam.z()));
  }
  const Eigen::Vector3d h = view.K * p_cam;
  return {Eigen::Vector2d(h.x() / h.z(), h.y() / h.z()), p_cam.z()};
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Matrix3d& K,
                                                const Eigen::Vector3d& p_cam) {
  const double z = p_cam.z();
  const double inv_z = 1.0 / z;
  Eigen::Matrix<double, 2, 3> J;
  for (int a = 0; a < 2; ++a) {
    const double n = K(a, 0) * p_cam.x() + K(a, 1) * p_cam.y();
    J(a, 0) = K(a, 0) * inv_z;
    J(a, 1) = K(a, 1) * inv_z;
    J(a, 2) = -n * inv_z * inv_z;
  }
  return J;
}

Eigen::Matrix2d project_covariance(const Eigen::Matrix3d& sigma, const Eigen::Vector3d& mu,
                                   const CameraView& view, double floor) {
  const Eigen::Matrix3d sym = 0.5 * (sigma + sigma.transpose());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + sigma.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::NonPSD, "covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= -1e-9) {
    throw Error(ErrorCode::NonPSD, "covariance has a negative eigenvalue");
  }
  const Eigen::Vector3d p_cam = view.R * mu + view.t;
  if (!(p_cam.z() > kDepthEps)) {
    throw Error(ErrorCode::BehindCamera, "point depth " + std::to_string(p_cam.z()));
  }
  const Eigen::Matrix<double, 2, 3> T = projection_jacobian(view.K, p_cam) * view.R;
  Eigen::Matrix2d cov = T * sym * T.transpose();
  const double off = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 1) = off;
  cov(1, 0) = off;
  cov(0, 0) += floor;
  cov(1, 1) += floor;
  return cov;
}

Eigen::Vector3d pixel_ray_direction(const CameraView& view, double u, double v) {
  const Eigen::Vector3d d_cam = view.K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(u, v, 1.0));
  return (view.R.transpose() * d_cam).normalized();
}

Eigen::Vector3d unproject(const CameraView& view, double u, double v, double depth) {
  Eigen::Vector3d d_cam = view.K.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(u, v, 1.0));
  d_cam *= depth / d_cam.z();
  return view.R.transpose() * (d_cam - view.t);
}

Trajectory make_circular_trajectory(int n_views, double span_degrees, double source_distance,
                                    const DetectorParams& detector, TimeMode time_mode,
                                    double angle_offset_degrees, int first_view_id) {
  if (n_views < 2) throw Error(ErrorCode::InvalidConfig, "trajectory needs at least 2 views");
  if (!(span_degrees > 0.0 && span_degrees <= 360.0)) {
    throw Error(ErrorCode::InvalidConfig, "span must lie in (0, 360] degrees");
  }
  if (!(source_distance > 0.0) || !(detector.source_to_detector_mm > 0.0) ||
      !(detector.pixel_pitch_mm > 0.0) || detector.width < 1 || detector.height < 1) {
    throw Error(ErrorCode::InvalidConfig, "invalid source/detector parameters");
  }

  Trajectory traj;
  traj.source_distance = source_distance;
  traj.detector_distance = detector.source_to_detector_mm;
  const double focal = detector.source_to_detector_mm / detector.pixel_pitch_mm;
  const double step = span_degrees >= 360.0 ? span_degrees / n_views : span_degrees / (n_views - 1);
  const Eigen::Vector3d up(0.0, 0.0, 1.0);

  for (int k = 0; k < n_views; ++k) {
    const double theta = (angle_offset_degrees + step * k) * std::numbers::pi / 180.0;
    const Eigen::Vector3d source(source_distance * std::cos(theta),
                                 source_distance * std::sin(theta), 0.0);
    const Eigen::Vector3d forward = (-source).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    CameraView view;
    view.view_id = first_view_id + k;
    view.R.row(0) = right.transpose();
    view.R.row(1) = down.transpose();
    view.R.row(2) = forward.transpose();
    view.t = -view.R * source;
    view.K << focal, 0.0, 0.5 * detector.width,
              0.0, focal, 0.5 * detector.height,
              0.0, 0.0, 1.0;
    view.width_hr = detector.width;
    view.height_hr = detector.height;
    view.timestamp = time_mode == TimeMode::sweep ? static_cast<double>(k) / (n_views - 1) : 0.0;
    traj.views.push_back(view);
  }
  return traj;
}

namespace {

void append_number(std::string& out, double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  out += buf;
}

template <typename Matrix>
void append_array(std::string& out, const Matrix& m, bool row_major) {
  out += '[';
  bool first = true;
  if (row_major) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (!first) out += ", ";
        append_number(out, m(r, c));
        first = false;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!first) out += ", ";
      append_number(out, m(i));
      first = false;
    }
  }
  out += ']';
}

}  // namespace

std::string geometry_to_json(std::span<const CameraView> views) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    out += "  {\"view_id\": " + std::to_string(v.view_id) + ", \"K\": ";
    append_array(out, v.K, true);
    out += ", \"R\": ";
    append_array(out, v.R, true);
    out += ", \"t\": ";
    append_array(out, v.t, false);
    out += ", \"width_hr\": " + std::to_string(v.width_hr);
    out += ", \"height_hr\": " + std::to_string(v.height_hr);
    out += ", \"timestamp\": ";
    append_number(out, v.timestamp);
    out += i + 1 < views.size() ? "},\n" : "}\n";
  }
  out += "]\n";
  return out;
}

std::vector<CameraView> geometry_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("geometry JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::FormatError, "geometry JSON must be an array");
  std::vector<CameraView> views;
  try {
    for (const auto& item : doc) {
      CameraView v;
      v.view_id = item.at("view_id").get<int>();
      const auto K = item.at("K").get<std::vector<double>>();
      const auto R = item.at("R").get<std::vector<double>>();
      const auto t = item.at("t").get<std::vector<double>>();
      if (K.size() != 9 || R.size() != 9 || t.size() != 3) {
        throw Error(ErrorCode::FormatError, "geometry entry has wrong array sizes");
      }
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          v.K(r, c) = K[3 * r + c];
          v.R(r, c) = R[3 * r + c];
        }
        v.t(r) = t[r];
      }
      v.width_hr = item.at("width_hr").get<int>();
      v.height_hr = item.at("height_hr").get<int>();
      v.timestamp = item.at("timestamp").get<double>();
      validate_view(v);
      views.push_back(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("geometry JSON: ") + e.what());
  }
  return views;
}

void save_geometry(const std::filesystem::path& path, std::span<const CameraView> views) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << geometry_to_json(views);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<CameraView> load_geometry(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return geometry_from_json(ss.str());
}

}  // namespace dsasrgs
