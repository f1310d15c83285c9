// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file dataset.hpp
/// @brief On-disk projection datasets: writer from the analytic phantom and
/// the loader used by training and evaluation.
///
/// Layout under the dataset root:
///   manifest.json, geometry.json, hr/{view}_{frame:04}.pfm, lr/{view}_{frame:04}.pfm
///   heldout/geometry.json, heldout/hr/... (optional novel views, HR only)
#pragma once

#include "dsasrgs/geometry.hpp"
#include "dsasrgs/image.hpp"
#include "dsasrgs/phantom.hpp"
#include "dsasrgs/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsasrgs {

struct Manifest {
  int hr_width = 0;
  int hr_height = 0;
  int lr_width = 0;
  int lr_height = 0;
  int n_views = 0;
  int n_frames = 0;
  int n_heldout_views = 0;
  /// Multiplier applied to the raw line integrals so the global HR max is 1.
  double normalization_scale = 1.0;
  std::vector<double> frame_times;
  BoundingBox bbox;
  std::string hr_pattern = "hr/{view}_{frame:04}.pfm";
  std::string lr_pattern = "lr/{view}_{frame:04}.pfm";
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
};

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);

/// Frame f of n sits at f / (n - 1); a single frame sits at `fallback`.
double frame_time(int frame, int n_frames, double fallback = 0.0);

struct DatasetWriteOptions {
  int n_frames = 20;
  int hr_width = 256;
  int hr_height = 256;
  /// Standard deviation of additive Gaussian noise on LR observations, after
  /// normalization. Zero disables it.
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  BoundingBox bbox;
};

/// Writes the dataset for `train` views (HR and LR) and optional `heldout`
/// views (HR only), normalized by one global scale. Returns the manifest.
Manifest make_dataset(const std::vector<PhantomBlob>& blobs, const BolusParams& bolus,
                      const Trajectory& train, const Trajectory* heldout,
                      const DatasetWriteOptions& options, const std::filesystem::path& out_dir);

struct Dataset {
  std::filesystem::path root;
  Manifest manifest;
  std::vector<CameraView> views;
  std::vector<CameraView> heldout_views;

  std::filesystem::path hr_path(int view_index, int frame) const;
  std::filesystem::path lr_path(int view_index, int frame) const;
  std::filesystem::path heldout_hr_path(int view_index, int frame) const;

  ProjectionImage load_hr(int view_index, int frame) const;
  ProjectionImage load_lr(int view_index, int frame) const;
  ProjectionImage load_heldout_hr(int view_index, int frame) const;

  double time_of(int frame, int view_index = 0) const;
};

Dataset load_dataset(const std::filesystem::path& root);

}  // namespace dsasrgs
