// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/phantom.hpp"

#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/errors.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>

namespace dsasrgs {

void validate(const BolusParams& p) {
  if (!(p.peak_scale > 0.0) || !(p.shape > 0.0) || !(p.decay > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "bolus parameters must be positive");
  }
}

double bolus_curve(double t, double arrival, const BolusParams& p) {
  const double s = t - arrival;
  if (!(s > 0.0)) return 0.0;
  return p.peak_scale * std::pow(s / (p.shape * p.decay), p.shape) * std::exp(p.shape - s / p.decay);
}

double bolus_integral(const BolusParams& p) {
  return p.peak_scale * p.decay * std::exp(p.shape) * std::tgamma(p.shape + 1.0) /
         std::pow(p.shape, p.shape);
}

namespace {

struct Segment {
  Eigen::Vector3d start;
  Eigen::Vector3d dir;
  double length;
  int generation;
  double path_start;
};

/// Largest s >= 0 keeping start + s * dir inside the box.
double exit_distance(const BoundingBox& box, const Eigen::Vector3d& start, const Eigen::Vector3d& dir) {
  double s = std::numeric_limits<double>::infinity();
  for (int d = 0; d < 3; ++d) {
    if (dir[d] > 1e-12) s = std::min(s, (box.hi[d] - start[d]) / dir[d]);
    if (dir[d] < -1e-12) s = std::min(s, (box.lo[d] - start[d]) / dir[d]);
  }
  return std::max(s, 0.0);
}

Eigen::Vector3d any_perpendicular(const Eigen::Vector3d& v) {
  const Eigen::Vector3d a = std::abs(v.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  return v.cross(a).normalized();
}

}  // namespace

std::vector<PhantomBlob> generate_phantom(std::uint64_t seed, const PhantomConfig& config) {
  if (config.n_branches < 1 || config.blobs_per_branch < 1 || config.bbox.degenerate() ||
      !(config.root_radius > 0.0) || !(config.propagation_time > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid phantom configuration");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Keep vessels inside the central 80% of the box so blob tails stay in view.
  const Eigen::Vector3d c = config.bbox.center();
  const Eigen::Vector3d half = 0.4 * config.bbox.extent();
  const BoundingBox inner{c - half, c + half};

  std::vector<Segment> segments;
  std::deque<std::size_t> frontier;
  {
    Segment root;
    root.start = Eigen::Vector3d(c.x() + (unit(rng) - 0.5) * half.x() * 0.3,
                                 c.y() + (unit(rng) - 0.5) * half.y() * 0.3, inner.hi.z());
    Eigen::Vector3d dir(0.25 * (unit(rng) - 0.5), 0.25 * (unit(rng) - 0.5), -1.0);
    root.dir = dir.normalized();
    root.length = std::min(0.9 * half.z(), exit_distance(inner, root.start, root.dir));
    root.generation = 0;
    root.path_start = 0.0;
    segments.push_back(root);
    frontier.push_back(0);
  }
  while (static_cast<int>(segments.size()) < config.n_branches && !frontier.empty()) {
    const Segment parent = segments[frontier.front()];
    frontier.pop_front();
    const Eigen::Vector3d end = parent.start + parent.length * parent.dir;
    const Eigen::Vector3d axis0 = any_perpendicular(parent.dir);
    const double azimuth = 2.0 * std::numbers::pi * unit(rng);
    for (int side = 0; side < 2 && static_cast<int>(segments.size()) < config.n_branches; ++side) {
      const Eigen::Vector3d axis =
          Eigen::AngleAxisd(azimuth, parent.dir) * axis0;
      const double angle = (side == 0 ? 1.0 : -1.0) * (20.0 + 25.0 * unit(rng)) * std::numbers::pi / 180.0;
      Segment child;
      child.start = end;
      child.dir = (Eigen::AngleAxisd(angle, axis) * parent.dir).normalized();
      child.length = std::min(0.75 * parent.length, exit_distance(inner, end, child.dir));
      child.length = std::max(child.length, 1e-3);
      child.generation = parent.generation + 1;
      child.path_start = parent.path_start + parent.length;
      segments.push_back(child);
      frontier.push_back(segments.size() - 1);
    }
  }

  double max_path = 0.0;
  for (const auto& s : segments) max_path = std::max(max_path, s.path_start + s.length);

  std::vector<PhantomBlob> blobs;
  const int n = config.blobs_per_branch;
  for (std::size_t b = 0; b < segments.size(); ++b) {
    const auto& s = segments[b];
    const double radius = config.root_radius * std::pow(0.5, s.generation);
    const double longitudinal = s.length / n;
    const Eigen::Matrix3d ddT = s.dir * s.dir.transpose();
    const Eigen::Matrix3d sigma = longitudinal * longitudinal * ddT +
                                  radius * radius * (Eigen::Matrix3d::Identity() - ddT);
    for (int j = 0; j < n; ++j) {
      const double along = (j + 0.5) / n * s.length;
      PhantomBlob blob;
      blob.mu = s.start + along * s.dir;
      blob.sigma = 0.5 * (sigma + sigma.transpose());
      blob.branch_id = static_cast<int>(b);
      blob.arrival = config.propagation_time * (s.path_start + along) / max_path;
      blobs.push_back(blob);
    }
  }
  return blobs;
}

std::vector<PhantomBlob> generate_phantom(std::uint64_t seed, int n_branches, int blobs_per_branch,
                                          const BoundingBox& bbox) {
  PhantomConfig cfg;
  cfg.n_branches = n_branches;
  cfg.blobs_per_branch = blobs_per_branch;
  cfg.bbox = bbox;
  return generate_phantom(seed, cfg);
}

double gaussian_line_integral(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction,
                              const Eigen::Vector3d& mu, const Eigen::Matrix3d& sigma_inv) {
  const Eigen::Vector3d r = origin - mu;
  const Eigen::Vector3d Pd = sigma_inv * direction;
  const double A = direction.dot(Pd);
  const double B = r.dot(Pd);
  const double C = r.dot(sigma_inv * r);
  return std::sqrt(2.0 * std::numbers::pi / A) * std::exp(-0.5 * (C - B * B / A));
}

std::vector<BlobFootprint> analytic_footprints(std::span<const PhantomBlob> blobs,
                                               const CameraView& view, int width, int height) {
  const CameraView v = view_at_resolution(view, width, height);
  const Eigen::Vector3d origin = v.center();
  const Eigen::Matrix3d K_inv = v.K.inverse();
  const Eigen::Matrix3d Rt = v.R.transpose();
  std::vector<BlobFootprint> out(blobs.size());
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    const auto& blob = blobs[b];
    const Eigen::Vector3d p_cam = v.R * blob.mu + v.t;
    if (!(p_cam.z() > kDepthEps)) continue;
    const Eigen::Matrix2d cov = project_covariance(blob.sigma, blob.mu, v, 0.0);
    const Eigen::Vector3d h = v.K * p_cam;
    const double u = h.x() / h.z();
    const double w = h.y() / h.z();
    const double rx = 8.0 * std::sqrt(cov(0, 0)) + 2.0;
    const double ry = 8.0 * std::sqrt(cov(1, 1)) + 2.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(u - rx)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(u + rx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(w - ry)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(w + ry)));
    const Eigen::Matrix3d sigma_inv = blob.sigma.inverse();
    auto& fp = out[b];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector3d d = (Rt * (K_inv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0))).normalized();
        const double value = gaussian_line_integral(origin, d, blob.mu, sigma_inv);
        if (value <= 0.0) continue;
        fp.pixel.push_back(static_cast<std::uint32_t>(y * width + x));
        fp.value.push_back(static_cast<float>(value));
      }
    }
  }
  return out;
}

ProjectionImage analytic_project(std::span<const PhantomBlob> blobs, const BolusParams& bolus,
                                 const CameraView& view, double t, int width, int height) {
  t = checked_time(t);
  validate(bolus);
  ProjectionImage image(width, height, ImageRole::generic);
  std::vector<double> acc(image.size(), 0.0);
  const auto footprints = analytic_footprints(blobs, view, width, height);
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    const double c = bolus_curve(t, blobs[b].arrival, bolus);
    if (c == 0.0) continue;
    const auto& fp = footprints[b];
    for (std::size_t k = 0; k < fp.pixel.size(); ++k) acc[fp.pixel[k]] += c * fp.value[k];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) image.pixels[i] = static_cast<float>(acc[i]);
  return image;
}

}  // namespace dsasrgs
