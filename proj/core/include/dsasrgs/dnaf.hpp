// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file dnaf.hpp
/// @brief Dynamic neural attenuation field.
///
/// rho(mu, t) = softplus(MLP(H3(norm(mu)) ++ H4(norm(mu), t))), where H3 and
/// H4 are multiresolution hash-grid encodings over space and space-time.
/// Forward and backward passes are written out by hand; all arithmetic runs
/// in double on top of f32 parameters.
#pragma once

#include "dsasrgs/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dsasrgs {

inline constexpr std::array<std::uint32_t, 4> kHashPrimes = {1u, 2654435761u, 805459861u,
                                                              3674653429u};

struct HashGridConfig {
  int dims = 3;
  int levels = 8;
  int features_per_level = 2;
  int table_size_log2 = 15;
  int base_resolution = 16;
  float growth_factor = 1.382f;
};

struct HashGridEncoding {
  HashGridConfig config;
  /// One flat table per level: slot-major, features_per_level floats per slot.
  std::vector<std::vector<float>> tables;

  int output_dim() const { return config.levels * config.features_per_level; }
  std::uint32_t slots_per_level() const { return 1u << config.table_size_log2; }
  int resolution(int level) const;
};

/// Allocates zeroed tables after validating the config.
HashGridEncoding make_hash_grid(const HashGridConfig& config);

/// Spatial hash of an integer grid index: xor of index_d * prime_d, masked to
/// the table size.
std::uint32_t hash_slot(std::span<const std::int64_t> index, int table_size_log2);

/// Features for normalized coordinates x (clamped to [0, 1]), written to
/// `out` (size output_dim()).
void encode(const HashGridEncoding& enc, std::span<const double> x, std::span<double> out);

struct AttenuationMLP {
  /// Layer widths including input and output, e.g. {28, 32, 32, 1}.
  std::vector<int> widths;
  /// weights[l] is widths[l+1] x widths[l], row-major.
  std::vector<std::vector<float>> weights;
  std::vector<std::vector<float>> biases;

  int layers() const { return static_cast<int>(weights.size()); }
};

struct FieldConfig {
  HashGridConfig enc3d{3, 8, 2, 15, 16, 1.382f};
  HashGridConfig enc4d{4, 6, 2, 15, 8, 1.382f};
  std::vector<int> hidden = {32, 32};
  float table_init_range = 1e-4f;
  float initial_rho = 0.01f;
};

struct AttenuationField {
  HashGridEncoding enc3d;
  HashGridEncoding enc4d;
  AttenuationMLP mlp;
  BoundingBox bbox;

  int feature_dim() const { return enc3d.output_dim() + enc4d.output_dim(); }
};

AttenuationField init_field(const FieldConfig& config, const BoundingBox& bbox, std::uint64_t seed);

/// Throws InvalidConfig when widths and parameter arrays disagree.
void check_field(const AttenuationField& field);

double softplus(double x);
double softplus_inverse(double y);

/// Central attenuation at world point mu (mm) and normalized time t.
double attenuation(const AttenuationField& field, const Eigen::Vector3d& mu, double t);

/// Dense gradient storage mirroring the field's parameter layout.
struct FieldGradBuffer {
  std::vector<std::vector<double>> enc3d;
  std::vector<std::vector<double>> enc4d;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static FieldGradBuffer zeros_like(const AttenuationField& field);
  void zero();
  void add(const FieldGradBuffer& other);
};

/// One nonzero-support hash-table gradient. `entry` indexes the level's flat
/// table (slot * features_per_level + feature).
struct TableGradEntry {
  int encoding;  // 0 = spatial grid, 1 = spatio-temporal grid
  int level;
  std::uint32_t entry;
  double value;
};

struct AttenuationGrad {
  double rho = 0.0;
  Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();
  /// Sorted by (encoding, level, entry), duplicates merged.
  std::vector<TableGradEntry> tables;
  std::vector<std::vector<double>> d_weights;
  std::vector<std::vector<double>> d_biases;
};

/// Exact gradients of d_rho * rho(mu, t). Returns the sparse form described
/// by TableGradEntry; untouched slots never appear.
AttenuationGrad attenuation_backward(const AttenuationField& field, const Eigen::Vector3d& mu,
                                     double t, double d_rho);

/// Same gradients accumulated straight into a dense buffer. Returns
/// d_rho * d rho / d mu.
Eigen::Vector3d accumulate_attenuation_backward(const AttenuationField& field,
                                                const Eigen::Vector3d& mu, double t, double d_rho,
                                                FieldGradBuffer& grads);

/// Throws InvalidTime when t is outside [0, 1] beyond 1e-9.
double checked_time(double t);

}  // namespace dsasrgs
