// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file supervision.hpp
/// @brief Multi-fidelity supervision: resampling, SSIM, confidence-weighted
/// teaching images, the LR/HR loss pair and super-resolution providers.
///
/// Images entering SSIM are expected on a [0, 1] scale (dynamic range 1).
/// Internal arithmetic is double; public image outputs are f32.
#pragma once

#include "dsasrgs/image.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsasrgs {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

struct ConfidenceConfig {
  double alpha_c = 5.0;
  double beta_c = 1.0;
  bool learnable = false;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  int texture_window = 7;

  SsimConfig ssim() const { return {ssim_window, ssim_sigma, 0.01, 0.03, 1.0}; }
};

void validate(const ConfidenceConfig& cfg);

struct LossConfig {
  double lambda_ssim = 0.2;
  double mf_weight = 0.4;
};

void validate(const LossConfig& cfg);

inline constexpr int kSrFactor = 4;

/// Catmull-Rom (a = -0.5) upsampling with clamped edges.
ProjectionImage upsample_bicubic(const ProjectionImage& img, int factor = kSrFactor);

/// factor x factor box average; dims must be divisible by factor.
ProjectionImage downsample_area(const ProjectionImage& img, int factor = kSrFactor);

/// Per-pixel SSIM with a Gaussian window and reflect-101 padding.
ProjectionImage ssim_map(const ProjectionImage& a, const ProjectionImage& b,
                         const SsimConfig& cfg = {});
double ssim_mean(const ProjectionImage& a, const ProjectionImage& b, const SsimConfig& cfg = {});

struct SsimWithGrad {
  double value = 0.0;
  std::vector<double> grad_a;  // d mean-SSIM / d a
};

/// Mean SSIM of double-valued `a` against `b` and its exact gradient w.r.t. a.
SsimWithGrad ssim_mean_with_grad(std::span<const double> a, std::span<const double> b, int width,
                                 int height, const SsimConfig& cfg = {});

/// Sobel magnitude, box-averaged over texture_window, divided by its 99th
/// percentile and clamped to [0, 1]. Flat images map to zero.
ProjectionImage texture_richness(const ProjectionImage& img, const ConfidenceConfig& cfg = {});

/// sigmoid(alpha_c * SSIM(I_sr, I_lr_up) + beta_c * T(I_sr)), pixelwise.
ProjectionImage confidence_map(const ProjectionImage& sr, const ProjectionImage& lr_up,
                               const ConfidenceConfig& cfg = {});

/// C * I_sr + (1 - C) * I_lr_up, pixelwise.
ProjectionImage teaching_image(const ProjectionImage& sr, const ProjectionImage& lr_up,
                               const ProjectionImage& confidence);

struct LossValue {
  double value = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  /// d value / d I_rend_hr, row-major at HR dims.
  std::vector<double> grad;
};

/// (1 - l) * |down(I_rend) - I_lr|_1 + l * (1 - SSIM(down(I_rend), I_lr)), with
/// |.|_1 the per-pixel mean and the gradient chained through the box filter.
LossValue loss_gt(const ProjectionImage& render_hr, const ProjectionImage& lr,
                  const LossConfig& cfg, const SsimConfig& ssim = {});

/// The same form at HR against the teaching image.
LossValue loss_sr(const ProjectionImage& render_hr, const ProjectionImage& teach,
                  const LossConfig& cfg, const SsimConfig& ssim = {});

/// L_gt + mf_weight * L_sr.
double total_loss(double loss_gt, double loss_sr, const LossConfig& cfg);

/// Source of HR pseudo-labels for an LR observation.
class SrProvider {
 public:
  virtual ~SrProvider() = default;
  virtual ProjectionImage apply(const ProjectionImage& lr, int view_id, int frame) const = 0;
  virtual std::string name() const = 0;
};

/// Bicubic x4 followed by an unsharp mask (Gaussian blur, out = up + amount * (up - blur)).
class BicubicSharpenProvider final : public SrProvider {
 public:
  explicit BicubicSharpenProvider(double amount = 0.5, double sigma = 1.0)
      : amount_(amount), sigma_(sigma) {}
  ProjectionImage apply(const ProjectionImage& lr, int view_id, int frame) const override;
  std::string name() const override { return "bicubic_sharpen"; }

 private:
  double amount_;
  double sigma_;
};

/// Loads externally produced pseudo-labels from `{dir}/{view_id}_{frame:04}.pfm`.
class FileIngestProvider final : public SrProvider {
 public:
  explicit FileIngestProvider(std::filesystem::path dir) : dir_(std::move(dir)) {}
  ProjectionImage apply(const ProjectionImage& lr, int view_id, int frame) const override;
  std::string name() const override { return "file_ingest"; }
  std::filesystem::path path_for(int view_id, int frame) const;

 private:
  std::filesystem::path dir_;
};

ProjectionImage sr_apply(const SrProvider& provider, const ProjectionImage& lr, int view_id = 0,
                         int frame = 0);

/// "{view}_{frame:04}.pfm"
std::string frame_file_name(int view_id, int frame);

}  // namespace dsasrgs
