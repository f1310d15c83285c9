// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/trainer.hpp"

#include "dsasrgs/checkpoint.hpp"
#include "dsasrgs/errors.hpp"
#include "dsasrgs/parallel.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dsasrgs {

namespace fs = std::filesystem;
using nlohmann::json;

int TrainConfig::resolved_densify_stop() const {
  return densify_stop >= 0 ? densify_stop : static_cast<int>(std::floor(0.8 * iters));
}

double TrainConfig::effective_mf_weight() const {
  if (sr_mode == SrMode::off) return 0.0;
  return lr_consistency ? loss.mf_weight : 1.0;
}

void validate(const TrainConfig& cfg) {
  if (cfg.iters < 0) throw Error(ErrorCode::InvalidConfig, "iters must be non-negative");
  if (!cfg.lr_consistency && cfg.sr_mode == SrMode::off) {
    throw Error(ErrorCode::InvalidConfig, "dropping the LR term needs pseudo-labels (sr_mode != off)");
  }
  if (cfg.n_init < 1 && cfg.init_points.empty()) {
    throw Error(ErrorCode::InvalidConfig, "n_init must be at least 1");
  }
  // A derived stop may fall before the start on short runs; the window is then empty.
  const int stop = cfg.resolved_densify_stop();
  if (cfg.densify_stop >= 0 && cfg.densify && !(cfg.densify_start < stop && stop <= cfg.iters)) {
    throw Error(ErrorCode::InvalidConfig, "need densify_start < densify_stop <= iters");
  }
  const auto& lr = cfg.lr;
  if (!(lr.mu >= 0 && lr.log_scale >= 0 && lr.rot >= 0 && lr.tables >= 0 && lr.mlp >= 0 &&
        lr.confidence >= 0 && lr.mu_final_ratio > 0)) {
    throw Error(ErrorCode::InvalidConfig, "learning rates must be non-negative");
  }
  if (cfg.checkpoint_every < 0 || cfg.confidence_refresh < 1 || cfg.threads < 1 ||
      cfg.tile_size < 1 || !(cfg.cutoff_sigma > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "invalid schedule or render settings");
  }
  if (cfg.sr_mode == SrMode::directory && cfg.sr_dir.empty()) {
    throw Error(ErrorCode::InvalidConfig, "sr directory mode needs a path");
  }
  validate(cfg.adam);
  validate(cfg.adaptive);
  validate(cfg.loss);
  validate(cfg.confidence);
}

PairSchedule::PairSchedule(int views, int frames) : n_views(views), n_frames(frames) {
  if (views < 1 || frames < 1) throw Error(ErrorCode::InvalidConfig, "empty pair schedule");
  const std::int64_t pairs = static_cast<std::int64_t>(views) * frames;
  stride = views + 1;
  while (std::gcd(stride, pairs) != 1) ++stride;
}

std::pair<int, int> PairSchedule::at(std::int64_t iter) const {
  const std::int64_t pairs = static_cast<std::int64_t>(n_views) * n_frames;
  const std::int64_t p = (iter % pairs) * stride % pairs;
  return {static_cast<int>(p % n_views), static_cast<int>(p / n_views)};
}

namespace {

std::vector<Eigen::Vector3d> read_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Eigen::Vector3d p;
    if (!(ss >> p.x() >> p.y() >> p.z())) {
      throw Error(ErrorCode::FormatError, path.string() + ": expected 'x y z' per line");
    }
    pts.push_back(p);
  }
  if (pts.empty()) throw Error(ErrorCode::InvalidConfig, path.string() + " holds no points");
  return pts;
}

std::unique_ptr<SrProvider> make_provider(const TrainConfig& cfg) {
  switch (cfg.sr_mode) {
    case SrMode::bicubic: return std::make_unique<BicubicSharpenProvider>();
    case SrMode::directory: return std::make_unique<FileIngestProvider>(cfg.sr_dir);
    case SrMode::off: break;
  }
  return nullptr;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// HR supervision per (view, frame) pair. With a learnable confidence the SSIM
/// and texture maps are kept so alpha and beta can be differentiated.
struct Teacher {
  std::vector<ProjectionImage> teach;
  std::vector<ProjectionImage> sr, up, s_map, t_map;
  double alpha = 0.0;
  double beta = 0.0;
  bool learnable = false;

  void rebuild() {
    for (std::size_t p = 0; p < teach.size(); ++p) {
      ProjectionImage c(up[p].width, up[p].height, ImageRole::generic);
      for (std::size_t i = 0; i < c.size(); ++i) {
        c.pixels[i] = static_cast<float>(sigmoid(alpha * s_map[p].pixels[i] + beta * t_map[p].pixels[i]));
      }
      teach[p] = teaching_image(sr[p], up[p], c);
    }
  }
};

struct Tensors {
  int g_mu = -1;
  int mu = -1, log_scale = -1, rot = -1;
  std::vector<int> enc3d, enc4d, weights, biases;
  int confidence = -1;
};

Tensors register_tensors(Adam& opt, const TrainConfig& cfg, const Scene& scene,
                         const AttenuationField& field, double mu_scale) {
  Tensors t;
  t.g_mu = opt.add_group("mu", cfg.lr.mu * mu_scale);
  const int g_scale = opt.add_group("log_scale", cfg.lr.log_scale);
  const int g_rot = opt.add_group("rot", cfg.lr.rot);
  const int g_tables = opt.add_group("tables", cfg.lr.tables);
  const int g_mlp = opt.add_group("mlp", cfg.lr.mlp);
  const int g_conf = opt.add_group("confidence", cfg.lr.confidence);
  t.mu = opt.add_tensor(t.g_mu, scene.size() * 3);
  t.log_scale = opt.add_tensor(g_scale, scene.size() * 3);
  t.rot = opt.add_tensor(g_rot, scene.size() * 4);
  for (const auto& table : field.enc3d.tables) t.enc3d.push_back(opt.add_tensor(g_tables, table.size()));
  for (const auto& table : field.enc4d.tables) t.enc4d.push_back(opt.add_tensor(g_tables, table.size()));
  for (int l = 0; l < field.mlp.layers(); ++l) {
    t.weights.push_back(opt.add_tensor(g_mlp, field.mlp.weights[l].size()));
    t.biases.push_back(opt.add_tensor(g_mlp, field.mlp.biases[l].size()));
  }
  t.confidence = opt.add_tensor(g_conf, 2);
  return t;
}

template <std::size_t N>
void step_kernel_param(Adam& opt, int tensor, Scene& scene, std::array<float, N> GaussianKernel::*member,
                       const std::vector<std::array<double, N>>& grads) {
  const std::size_t n = scene.size();
  std::vector<float> params(n * N);
  std::vector<double> g(n * N);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < N; ++k) {
      params[i * N + k] = (scene.kernels[i].*member)[k];
      g[i * N + k] = grads[i][k];
    }
  }
  opt.update(tensor, params, g);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < N; ++k) (scene.kernels[i].*member)[k] = params[i * N + k];
  }
}

void remap_kernel_tensors(Adam& opt, const Tensors& t, const KernelRemap& remap) {
  opt.remap(t.mu, remap, 3);
  opt.remap(t.log_scale, remap, 3);
  opt.remap(t.rot, remap, 4);
}

std::string metadata_json(const TrainConfig& cfg, int iterations, std::size_t n_kernels,
                          const std::vector<double>& losses) {
  json meta;
  meta["iterations"] = iterations;
  meta["seed"] = cfg.seed;
  meta["n_kernels"] = n_kernels;
  meta["final_loss"] = losses.empty() ? json(nullptr) : json(losses.back());
  meta["mf_weight"] = cfg.effective_mf_weight();
  meta["sr_mode"] = cfg.sr_mode == SrMode::off ? "off" : cfg.sr_mode == SrMode::bicubic ? "bicubic" : "dir";
  return meta.dump();
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  const Manifest& m = ds.manifest;
  const int W = m.hr_width;
  const int H = m.hr_height;
  const int V = m.n_views;
  const int F = m.n_frames;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  std::unique_ptr<ThreadPool> pool;
  if (cfg.threads > 1) pool = std::make_unique<ThreadPool>(cfg.threads);
  RenderSettings settings;
  settings.tile_size = cfg.tile_size;
  settings.cutoff_sigma = cfg.cutoff_sigma;
  settings.pool = pool.get();

  SceneInitConfig init;
  init.bbox = m.bbox;
  init.n_init = cfg.n_init;
  if (!cfg.init_points.empty()) init.seed_points = read_points(cfg.init_points);
  Scene scene = init_scene(init, cfg.seed);
  AttenuationField field = init_field(cfg.field, m.bbox, cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  Rng rng(cfg.seed ^ 0xada9717eULL);

  std::vector<ProjectionImage> lr(static_cast<std::size_t>(V) * F);
  for (int v = 0; v < V; ++v) {
    for (int f = 0; f < F; ++f) lr[v * F + f] = ds.load_lr(v, f);
  }

  const double beta_mf = cfg.effective_mf_weight();
  const SsimConfig ssim_cfg;
  Teacher teacher;
  if (beta_mf > 0.0) {
    const auto provider = make_provider(cfg);
    teacher.learnable = cfg.confidence.learnable && cfg.confidence_fusion;
    teacher.alpha = cfg.confidence.alpha_c;
    teacher.beta = cfg.confidence.beta_c;
    teacher.teach.resize(lr.size());
    for (int v = 0; v < V; ++v) {
      for (int f = 0; f < F; ++f) {
        const std::size_t p = static_cast<std::size_t>(v) * F + f;
        ProjectionImage sr = sr_apply(*provider, lr[p], ds.views[v].view_id, f);
        ProjectionImage up = upsample_bicubic(lr[p]);
        if (!cfg.confidence_fusion) {
          sr.role = ImageRole::teach;
          teacher.teach[p] = std::move(sr);
        } else if (teacher.learnable) {
          teacher.s_map.push_back(ssim_map(sr, up, cfg.confidence.ssim()));
          teacher.t_map.push_back(texture_richness(sr, cfg.confidence));
          teacher.sr.push_back(std::move(sr));
          teacher.up.push_back(std::move(up));
        } else {
          teacher.teach[p] = teaching_image(sr, up, confidence_map(sr, up, cfg.confidence));
        }
      }
    }
    if (teacher.learnable) teacher.rebuild();
  }

  const double mu_scale = m.bbox.diagonal();
  Adam opt(cfg.adam);
  const Tensors tensors = register_tensors(opt, cfg, scene, field, mu_scale);
  const BoundingBox allowed = m.bbox.expanded(Scene::kMeanMargin);
  const PairSchedule schedule(V, F);
  const int densify_stop = cfg.resolved_densify_stop();

  std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw Error(ErrorCode::IoError, "cannot write " + (out_dir / "train_log.jsonl").string());

  TrainResult result;
  auto write_checkpoint = [&](const fs::path& path, int done) {
    save_checkpoint(path, scene, field, metadata_json(cfg, done, scene.size(), result.losses));
  };

  for (int it = 0; it < cfg.iters; ++it) {
    const double progress = static_cast<double>(it) / cfg.iters;
    const double lr_mu = cfg.lr.mu * mu_scale * std::pow(cfg.lr.mu_final_ratio, progress);
    opt.set_lr(tensors.g_mu, lr_mu);

    const auto [v, f] = schedule.at(it);
    const std::size_t p = static_cast<std::size_t>(v) * F + f;
    const double t = ds.time_of(f, v);
    const RenderResult r = render(scene, field, ds.views[v], t, W, H, settings);

    LossValue lg = loss_gt(r.image, lr[p], cfg.loss, ssim_cfg);
    double loss = lg.value;
    double loss_sr_value = 0.0;
    std::vector<double> d_image = std::move(lg.grad);
    std::vector<double> d_teach;
    if (beta_mf > 0.0) {
      const LossValue ls = loss_sr(r.image, teacher.teach[p], cfg.loss, ssim_cfg);
      loss_sr_value = ls.value;
      if (cfg.lr_consistency) {
        loss = total_loss(lg.value, ls.value, cfg.loss);
        for (std::size_t i = 0; i < d_image.size(); ++i) d_image[i] += beta_mf * ls.grad[i];
      } else {
        loss = ls.value;
        d_image = ls.grad;
      }
    }
    if (!std::isfinite(loss)) {
      spdlog::error("non-finite loss at iteration {} (view {}, frame {})", it, ds.views[v].view_id, f);
      throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite at iteration " + std::to_string(it));
    }

    const KernelGrads grads = render_backward(scene, field, r.state, d_image, W, H, settings);
    accumulate_subpixel_grads(scene, grads);
    accumulate_attenuation(scene, r.rho);

    opt.begin_step();
    step_kernel_param(opt, tensors.mu, scene, &GaussianKernel::mu, grads.d_mu);
    step_kernel_param(opt, tensors.log_scale, scene, &GaussianKernel::log_scale, grads.d_log_scale);
    step_kernel_param(opt, tensors.rot, scene, &GaussianKernel::rot, grads.d_rot);
    for (std::size_t l = 0; l < field.enc3d.tables.size(); ++l) {
      opt.update(tensors.enc3d[l], field.enc3d.tables[l], grads.field.enc3d[l]);
    }
    for (std::size_t l = 0; l < field.enc4d.tables.size(); ++l) {
      opt.update(tensors.enc4d[l], field.enc4d.tables[l], grads.field.enc4d[l]);
    }
    for (int l = 0; l < field.mlp.layers(); ++l) {
      opt.update(tensors.weights[l], field.mlp.weights[l], grads.field.weights[l]);
      opt.update(tensors.biases[l], field.mlp.biases[l], grads.field.biases[l]);
    }
    for (auto& k : scene.kernels) sanitize_kernel(k, allowed);

    if (beta_mf > 0.0 && teacher.learnable) {
      // d L_sr / d teach, then through teach = C sr + (1 - C) up with C = sigmoid(alpha S + beta T).
      const auto& teach = teacher.teach[p];
      const std::size_t n = teach.size();
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = teach.pixels[i];
        b[i] = r.image.pixels[i];
      }
      const SsimWithGrad sg = ssim_mean_with_grad(a, b, W, H, ssim_cfg);
      double g_alpha = 0.0, g_beta = 0.0;
      const double lam = cfg.loss.lambda_ssim;
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = a[i] - b[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        const double d_t = beta_mf * ((1.0 - lam) * sign / n - lam * sg.grad_a[i]);
        const double s = teacher.s_map[p].pixels[i];
        const double tx = teacher.t_map[p].pixels[i];
        const double c = sigmoid(teacher.alpha * s + teacher.beta * tx);
        const double d_c = d_t * (teacher.sr[p].pixels[i] - teacher.up[p].pixels[i]) * c * (1.0 - c);
        g_alpha += d_c * s;
        g_beta += d_c * tx;
      }
      std::array<float, 2> ab{static_cast<float>(teacher.alpha), static_cast<float>(teacher.beta)};
      const std::array<double, 2> gab{g_alpha, g_beta};
      opt.update(tensors.confidence, ab, gab);
      teacher.alpha = ab[0];
      teacher.beta = ab[1];
      if ((it + 1) % cfg.confidence_refresh == 0) teacher.rebuild();
    }

    std::size_t pruned = 0, split = 0, inserted = 0;
    if ((it + 1) % cfg.adaptive.window == 0) {
      const bool in_range = it + 1 >= cfg.densify_start && it + 1 <= densify_stop;
      KernelRemap remap;
      if (in_range && cfg.insert) {
        const ProjectionImage target = beta_mf > 0.0 ? teacher.teach[p] : upsample_bicubic(lr[p]);
        ProjectionImage residual(W, H, ImageRole::generic);
        for (std::size_t i = 0; i < residual.size(); ++i) {
          residual.pixels[i] = std::abs(r.image.pixels[i] - target.pixels[i]);
        }
        inserted = residual_guided_insert(scene, residual, ds.views[v], cfg.adaptive, rng, &r.state,
                                          &remap).inserted;
        remap_kernel_tensors(opt, tensors, remap);
      }
      if (cfg.prune) {
        pruned = prune(scene, cfg.adaptive, &remap);
        remap_kernel_tensors(opt, tensors, remap);
      }
      if (in_range && cfg.densify) {
        const auto selected = select_densify(scene, cfg.adaptive, it, cfg.iters);
        split = densify(scene, selected, cfg.adaptive, rng, &remap).split;
        remap_kernel_tensors(opt, tensors, remap);
      }
      reset_stats(scene, StatsSelector::both);
    }

    result.losses.push_back(loss);
    json line;
    line["iter"] = it;
    line["loss"] = loss;
    line["loss_gt"] = lg.value;
    line["loss_sr"] = loss_sr_value;
    line["n_kernels"] = scene.size();
    line["pruned"] = pruned;
    line["split"] = split;
    line["inserted"] = inserted;
    line["lr_mu"] = lr_mu;
    log << line.dump() << '\n';

    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iters) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.dsgs", it + 1);
      write_checkpoint(out_dir / name, it + 1);
    }
    if ((it + 1) % 100 == 0) {
      spdlog::info("iter {:5d}  loss {:.6f}  kernels {}", it + 1, loss, scene.size());
    }
  }
  log.flush();
  if (!log) throw Error(ErrorCode::IoError, "failed writing the training log");

  result.checkpoint = out_dir / "checkpoint.dsgs";
  result.metadata = metadata_json(cfg, cfg.iters, scene.size(), result.losses);
  write_checkpoint(result.checkpoint, cfg.iters);
  result.iterations = cfg.iters;
  result.final_loss = result.losses.empty() ? 0.0 : result.losses.back();
  result.scene = std::move(scene);
  result.field = std::move(field);
  return result;
}

double psnr(const ProjectionImage& a, const ProjectionImage& b) {
  require_same_dims(a, b, "psnr");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    sum += d * d;
  }
  const double mse = a.size() ? sum / static_cast<double>(a.size()) : 0.0;
  if (mse < 1e-12) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::string to_string(EvalSplit split) {
  switch (split) {
    case EvalSplit::train: return "train";
    case EvalSplit::train_lr: return "train_lr";
    case EvalSplit::heldout: return "heldout";
  }
  return "train";
}

EvalSplit eval_split_from_string(const std::string& name) {
  if (name == "train") return EvalSplit::train;
  if (name == "train_lr") return EvalSplit::train_lr;
  if (name == "heldout" || name == "heldout_views") return EvalSplit::heldout;
  throw Error(ErrorCode::InvalidConfig, "unknown split '" + name + "'");
}

EvalReport evaluate(const Scene& scene, const AttenuationField& field, const Dataset& ds,
                    EvalSplit split, const RenderSettings& settings) {
  const auto start = std::chrono::steady_clock::now();
  const Manifest& m = ds.manifest;
  const auto& views = split == EvalSplit::heldout ? ds.heldout_views : ds.views;
  if (views.empty()) throw Error(ErrorCode::InvalidConfig, "split '" + to_string(split) + "' has no views");
  EvalReport report;
  report.split = split;
  report.n_kernels = scene.size();
  for (int v = 0; v < static_cast<int>(views.size()); ++v) {
    for (int f = 0; f < m.n_frames; ++f) {
      const double t = m.n_frames <= 1 ? views[v].timestamp : m.frame_times[f];
      const RenderResult r = render(scene, field, views[v], t, m.hr_width, m.hr_height, settings);
      ProjectionImage pred = r.image;
      ProjectionImage truth;
      switch (split) {
        case EvalSplit::train: truth = ds.load_hr(v, f); break;
        case EvalSplit::heldout: truth = ds.load_heldout_hr(v, f); break;
        case EvalSplit::train_lr:
          truth = ds.load_lr(v, f);
          pred = downsample_area(r.image);
          break;
      }
      EvalImage e;
      e.view_id = views[v].view_id;
      e.frame = f;
      e.t = t;
      e.psnr = psnr(pred, truth);
      e.ssim = ssim_mean(pred, truth);
      report.images.push_back(e);
    }
  }
  for (const auto& e : report.images) {
    report.mean_psnr += e.psnr;
    report.mean_ssim += e.ssim;
  }
  report.mean_psnr /= static_cast<double>(report.images.size());
  report.mean_ssim /= static_cast<double>(report.images.size());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string eval_report_to_json(const EvalReport& report, bool per_image) {
  json doc;
  doc["split"] = to_string(report.split);
  doc["n_images"] = report.images.size();
  doc["mean_psnr"] = report.mean_psnr;
  doc["mean_ssim"] = report.mean_ssim;
  doc["n_kernels"] = report.n_kernels;
  doc["wall_seconds"] = report.wall_seconds;
  if (per_image) {
    json images = json::array();
    for (const auto& e : report.images) {
      images.push_back({{"view_id", e.view_id}, {"frame", e.frame}, {"t", e.t}, {"psnr", e.psnr},
                        {"ssim", e.ssim}});
    }
    doc["images"] = std::move(images);
  }
  return doc.dump(2);
}

}  // namespace dsasrgs
