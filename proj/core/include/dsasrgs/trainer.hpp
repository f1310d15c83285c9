// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file trainer.hpp
/// @brief Optimization loop, evaluation and image metrics.
#pragma once

#include "dsasrgs/adam.hpp"
#include "dsasrgs/adaptive.hpp"
#include "dsasrgs/dataset.hpp"
#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/rasterizer.hpp"
#include "dsasrgs/scene.hpp"
#include "dsasrgs/supervision.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace dsasrgs {

struct LearningRates {
  /// Position rate is multiplied by the scene box diagonal (mm).
  double mu = 1.6e-4;
  /// Position rate at the last iteration relative to the first.
  double mu_final_ratio = 0.01;
  double log_scale = 5e-3;
  double rot = 1e-3;
  double tables = 1e-2;
  double mlp = 1e-3;
  double confidence = 1e-2;
};

enum class SrMode { off, bicubic, directory };

struct TrainConfig {
  int iters = 3000;
  LearningRates lr;
  AdamConfig adam;
  AdaptiveConfig adaptive;
  LossConfig loss;
  ConfidenceConfig confidence;
  FieldConfig field;
  std::uint64_t seed = 0;
  int n_init = 2000;
  int densify_start = 300;
  /// Negative selects 0.8 * iters.
  int densify_stop = -1;
  bool prune = true;
  bool densify = true;
  bool insert = true;
  int checkpoint_every = 1000;
  /// Teaching images are rebuilt this often when the confidence is learnable.
  int confidence_refresh = 1000;
  int threads = 1;
  int tile_size = 16;
  double cutoff_sigma = 3.0;
  SrMode sr_mode = SrMode::off;
  /// When false the teaching image is the raw pseudo-label (confidence fixed at 1).
  bool confidence_fusion = true;
  /// When false the LR-consistency term is dropped and the pseudo-label loss is
  /// used alone with unit weight. Requires sr_mode != off.
  bool lr_consistency = true;
  std::filesystem::path sr_dir;
  /// Optional seed point cloud (whitespace-separated x y z per line).
  std::filesystem::path init_points;

  int resolved_densify_stop() const;
  /// Pseudo-label weight actually used: zero when sr_mode is off.
  double effective_mf_weight() const;
};

void validate(const TrainConfig& cfg);

struct TrainResult {
  Scene scene;
  AttenuationField field;
  int iterations = 0;
  double final_loss = 0.0;
  std::vector<double> losses;
  std::filesystem::path checkpoint;
  std::string metadata;
};

/// Writes train_log.jsonl (one object per iteration), periodic
/// checkpoint_{iter}.dsgs files and the final checkpoint.dsgs to out_dir.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::filesystem::path& out_dir);

/// PSNR with peak 1; 99 dB when the MSE is below 1e-12.
double psnr(const ProjectionImage& a, const ProjectionImage& b);

inline constexpr double kPsnrCap = 99.0;

enum class EvalSplit { train, train_lr, heldout };

std::string to_string(EvalSplit split);
EvalSplit eval_split_from_string(const std::string& name);

struct EvalImage {
  int view_id = 0;
  int frame = 0;
  double t = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  EvalSplit split = EvalSplit::train;
  std::vector<EvalImage> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::size_t n_kernels = 0;
  double wall_seconds = 0.0;
};

/// Renders every (view, frame) of the split at HR and scores it against the
/// HR ground truth; train_lr instead area-downsamples the render and scores
/// it against the LR observation.
EvalReport evaluate(const Scene& scene, const AttenuationField& field, const Dataset& dataset,
                    EvalSplit split, const RenderSettings& settings = {});

std::string eval_report_to_json(const EvalReport& report, bool per_image = true);

/// Round-robin order over (view, frame) pairs: iteration i visits pair
/// (i * stride) mod (n_views * n_frames), stride the smallest value >= n_views + 1
/// coprime with the pair count, so consecutive iterations change both view and frame.
struct PairSchedule {
  int n_views = 1;
  int n_frames = 1;
  std::int64_t stride = 1;

  PairSchedule(int views, int frames);
  std::pair<int, int> at(std::int64_t iter) const;  // (view index, frame)
};

}  // namespace dsasrgs
