// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "cli.hpp"

#include "dsasrgs/checkpoint.hpp"
#include "dsasrgs/errors.hpp"
#include "dsasrgs/parallel.hpp"
#include "dsasrgs/phantom.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

namespace dsasrgs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Binding {
  std::string key;
  std::function<void(const json&)> set;
  std::function<json()> get;
};

template <typename T>
Binding bind(std::string key, T& ref) {
  Binding b;
  b.key = key;
  b.set = [&ref, key](const json& j) {
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = j.is_boolean();
    else if constexpr (std::is_integral_v<T>) ok = j.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) ok = j.is_number();
    else ok = j.is_string();
    if (!ok) throw Error(ErrorCode::InvalidConfig, "config key '" + key + "' has the wrong type");
    if constexpr (std::is_same_v<T, fs::path>) ref = j.get<std::string>();
    else ref = j.get<T>();
  };
  b.get = [&ref]() -> json {
    if constexpr (std::is_same_v<T, fs::path>) return ref.string();
    else return ref;
  };
  return b;
}

using Schema = std::vector<std::pair<std::string, std::vector<Binding>>>;

Schema schema(RunConfig& c) {
  TrainConfig& t = c.train;
  Binding sr{"sr_mode",
             [&t](const json& j) {
               if (!j.is_string()) throw Error(ErrorCode::InvalidConfig, "config key 'sr_mode' must be a string");
               parse_sr_mode(j.get<std::string>(), t);
             },
             [&t]() -> json { return sr_mode_string(t); }};
  return {
      {"paths", {bind("dataset", c.dataset), bind("out", c.out)}},
      {"train",
       {bind("iters", t.iters), bind("seed", t.seed), bind("n_init", t.n_init),
        bind("densify_start", t.densify_start), bind("densify_stop", t.densify_stop),
        bind("prune", t.prune), bind("densify", t.densify), bind("insert", t.insert),
        bind("checkpoint_every", t.checkpoint_every), bind("confidence_refresh", t.confidence_refresh),
        bind("threads", t.threads), bind("tile_size", t.tile_size), bind("cutoff_sigma", t.cutoff_sigma),
        sr, bind("confidence_fusion", t.confidence_fusion), bind("lr_consistency", t.lr_consistency),
        bind("init_points", t.init_points)}},
      {"lr",
       {bind("mu", t.lr.mu), bind("mu_final_ratio", t.lr.mu_final_ratio), bind("log_scale", t.lr.log_scale),
        bind("rot", t.lr.rot), bind("tables", t.lr.tables), bind("mlp", t.lr.mlp),
        bind("confidence", t.lr.confidence)}},
      {"adam", {bind("beta1", t.adam.beta1), bind("beta2", t.adam.beta2), bind("eps", t.adam.eps)}},
      {"adaptive",
       {bind("window", t.adaptive.window), bind("prune_eps", t.adaptive.prune_eps),
        bind("grad_threshold", t.adaptive.grad_threshold), bind("eta_start", t.adaptive.eta_start),
        bind("eta_end", t.adaptive.eta_end), bind("k_children", t.adaptive.k_children),
        bind("offset_alpha", t.adaptive.offset_alpha), bind("scale_beta", t.adaptive.scale_beta),
        bind("residual_quantile", t.adaptive.residual_quantile),
        bind("residual_insert_cap", t.adaptive.residual_insert_cap),
        bind("max_kernels", t.adaptive.max_kernels)}},
      {"loss", {bind("lambda_ssim", t.loss.lambda_ssim), bind("mf_weight", t.loss.mf_weight)}},
      {"confidence",
       {bind("alpha_c", t.confidence.alpha_c), bind("beta_c", t.confidence.beta_c),
        bind("learnable", t.confidence.learnable), bind("ssim_window", t.confidence.ssim_window),
        bind("ssim_sigma", t.confidence.ssim_sigma), bind("texture_window", t.confidence.texture_window)}},
  };
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Held-out cameras sit halfway between neighbouring training cameras.
Trajectory make_heldout_trajectory(int n_train, int n_heldout, double span, double source_distance,
                                   const DetectorParams& det) {
  Trajectory out;
  if (n_heldout <= 0) return out;
  if (n_train < 3) throw Error(ErrorCode::InvalidConfig, "held-out views need at least 3 training views");
  const bool full = span >= 360.0;
  const double step = full ? span / n_train : span / (n_train - 1);
  const int gaps = full ? n_train : n_train - 1;
  if (n_heldout > gaps) throw Error(ErrorCode::InvalidConfig, "more held-out views than gaps between views");
  const Trajectory mids = make_circular_trajectory(gaps, full ? span : step * (gaps - 1),
                                                   source_distance, det, TimeMode::fixed, 0.5 * step, 1000);
  out.source_distance = mids.source_distance;
  out.detector_distance = mids.detector_distance;
  for (int j = 0; j < n_heldout; ++j) {
    const int k = static_cast<int>(std::floor((j + 0.5) * gaps / n_heldout));
    out.views.push_back(mids.views[k]);
  }
  return out;
}

struct PhantomArgs {
  int views = 30;
  int frames = 20;
  int hr = 256;
  int heldout = 5;
  double span = 180.0;
  double source_distance = 750.0;
  double sdd = 1200.0;
  double pitch = 0.6;
  int branches = 31;
  int blobs = 8;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  if (a.views < 3 && a.heldout > 0) throw Error(ErrorCode::InvalidConfig, "--heldout needs --views >= 3");
  BoundingBox bbox;
  DetectorParams det;
  det.width = a.hr;
  det.height = a.hr;
  det.source_to_detector_mm = a.sdd;
  det.pixel_pitch_mm = a.pitch;
  const Trajectory train = make_circular_trajectory(a.views, a.span, a.source_distance, det, TimeMode::sweep);
  const Trajectory held = make_heldout_trajectory(a.views, a.heldout, a.span, a.source_distance, det);
  PhantomConfig pc;
  pc.n_branches = a.branches;
  pc.blobs_per_branch = a.blobs;
  pc.bbox = bbox;
  const auto blobs = generate_phantom(a.seed, pc);
  DatasetWriteOptions opt;
  opt.n_frames = a.frames;
  opt.hr_width = a.hr;
  opt.hr_height = a.hr;
  opt.noise_sigma = a.noise;
  opt.seed = a.seed;
  opt.bbox = bbox;
  const Manifest m = make_dataset(blobs, BolusParams{}, train, held.views.empty() ? nullptr : &held, opt, a.out);
  json summary = {{"out", a.out},           {"n_views", m.n_views},          {"n_frames", m.n_frames},
                  {"hr_dims", {m.hr_width, m.hr_height}}, {"n_heldout_views", m.n_heldout_views},
                  {"n_blobs", blobs.size()}, {"normalization_scale", m.normalization_scale}};
  out << summary.dump(2) << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<int> iters;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> sr_mode;
  std::optional<int> n_init;
  std::optional<std::string> init_points;
  std::optional<double> mf_weight;
  std::optional<bool> learnable;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc;
  if (!a.config.empty()) rc = load_run_config(a.config);
  if (!a.data.empty()) rc.dataset = a.data;
  if (!a.out.empty()) rc.out = a.out;
  if (a.iters) rc.train.iters = *a.iters;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.threads) rc.train.threads = *a.threads;
  if (a.sr_mode) parse_sr_mode(*a.sr_mode, rc.train);
  if (a.n_init) rc.train.n_init = *a.n_init;
  if (a.init_points) rc.train.init_points = *a.init_points;
  if (a.mf_weight) rc.train.loss.mf_weight = *a.mf_weight;
  if (a.learnable) rc.train.confidence.learnable = *a.learnable;
  if (rc.dataset.empty()) throw Error(ErrorCode::InvalidConfig, "no dataset given (--data or paths.dataset)");
  if (rc.out.empty()) throw Error(ErrorCode::InvalidConfig, "no output directory given (--out or paths.out)");
  validate(rc.train);

  const Dataset ds = load_dataset(rc.dataset);
  fs::create_directories(rc.out);
  {
    std::ofstream cfg_out(rc.out / "run_config.json", std::ios::binary);
    cfg_out << run_config_to_json(rc);
  }
  const TrainResult r = train(ds, rc.train, rc.out);
  json summary = {{"checkpoint", r.checkpoint.string()},
                  {"iterations", r.iterations},
                  {"final_loss", r.final_loss},
                  {"n_kernels", r.scene.size()}};
  out << summary.dump(2) << '\n';
  return kExitOk;
}

struct RenderArgs {
  std::string checkpoint;
  std::string data;
  std::string geometry;
  std::optional<int> view;
  std::optional<double> t;
  std::optional<int> res;
  std::string out;
  int threads = 1;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  std::vector<CameraView> views;
  if (!a.geometry.empty()) {
    views = load_geometry(a.geometry);
  } else if (!a.data.empty()) {
    const Dataset ds = load_dataset(a.data);
    views = ds.views;
    views.insert(views.end(), ds.heldout_views.begin(), ds.heldout_views.end());
  } else {
    throw Error(ErrorCode::InvalidConfig, "render needs --data or --geometry");
  }
  if (views.empty()) throw Error(ErrorCode::InvalidConfig, "no views available");
  const CameraView* view = &views.front();
  if (a.view) {
    view = nullptr;
    for (const auto& v : views) {
      if (v.view_id == *a.view) view = &v;
    }
    if (!view) throw Error(ErrorCode::InvalidConfig, "view " + std::to_string(*a.view) + " not found");
  }
  const double t = checked_time(a.t ? *a.t : view->timestamp);
  int width = view->width_hr;
  int height = view->height_hr;
  if (a.res) {
    if (*a.res < 1) throw Error(ErrorCode::InvalidConfig, "--res must be positive");
    width = *a.res;
    height = std::max(1, static_cast<int>(std::lround(static_cast<double>(*a.res) * view->height_hr / view->width_hr)));
  }
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::unique_ptr<ThreadPool> pool;
  if (a.threads > 1) pool = std::make_unique<ThreadPool>(a.threads);
  RenderSettings settings;
  settings.pool = pool.get();
  RenderResult r = render(ck.scene, ck.field, *view, t, width, height, settings);
  r.image.role = ImageRole::render_hr;
  write_pfm(a.out, r.image);
  json summary = {{"out", a.out}, {"view_id", view->view_id}, {"t", t}, {"width", width}, {"height", height}};
  out << summary.dump(2) << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "heldout";
  int threads = 1;
  bool summary_only = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const EvalSplit split = eval_split_from_string(a.split);
  const Dataset ds = load_dataset(a.data);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  std::unique_ptr<ThreadPool> pool;
  if (a.threads > 1) pool = std::make_unique<ThreadPool>(a.threads);
  RenderSettings settings;
  settings.pool = pool.get();
  const EvalReport report = evaluate(ck.scene, ck.field, ds, split, settings);
  out << eval_report_to_json(report, !a.summary_only) << '\n';
  return kExitOk;
}

/// Routes spdlog to `err` for the duration of a command.
class LogScope {
 public:
  explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto logger = std::make_shared<spdlog::logger>("dsasrgs", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(previous_->level());
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

void parse_sr_mode(const std::string& text, TrainConfig& cfg) {
  if (text == "off") {
    cfg.sr_mode = SrMode::off;
  } else if (text == "bicubic") {
    cfg.sr_mode = SrMode::bicubic;
  } else if (text.rfind("dir=", 0) == 0 && text.size() > 4) {
    cfg.sr_mode = SrMode::directory;
    cfg.sr_dir = text.substr(4);
  } else {
    throw Error(ErrorCode::InvalidConfig, "sr mode must be off, bicubic or dir=PATH, got '" + text + "'");
  }
}

std::string sr_mode_string(const TrainConfig& cfg) {
  switch (cfg.sr_mode) {
    case SrMode::off: return "off";
    case SrMode::bicubic: return "bicubic";
    case SrMode::directory: return "dir=" + cfg.sr_dir.string();
  }
  return "off";
}

void apply_run_config(const std::string& json_text, RunConfig& cfg) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::InvalidConfig, "config root must be an object");
  auto sections = schema(cfg);
  for (const auto& [name, value] : doc.items()) {
    auto sec = std::find_if(sections.begin(), sections.end(), [&](const auto& s) { return s.first == name; });
    if (sec == sections.end()) throw Error(ErrorCode::InvalidConfig, "unknown config section '" + name + "'");
    if (!value.is_object()) throw Error(ErrorCode::InvalidConfig, "config section '" + name + "' must be an object");
    for (const auto& [key, v] : value.items()) {
      auto b = std::find_if(sec->second.begin(), sec->second.end(), [&](const Binding& x) { return x.key == key; });
      if (b == sec->second.end()) {
        throw Error(ErrorCode::InvalidConfig, "unknown config key '" + name + "." + key + "'");
      }
      b->set(v);
    }
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig cfg;
  apply_run_config(read_file(path), cfg);
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  json doc = json::object();
  for (const auto& [name, bindings] : schema(copy)) {
    json sec = json::object();
    for (const auto& b : bindings) sec[b.key] = b.get();
    doc[name] = std::move(sec);
  }
  return doc.dump(2) + "\n";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic radiative Gaussian splatting for sparse low-resolution projections"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom dataset");
  phantom->add_option("--views", pa.views, "Training views")->capture_default_str();
  phantom->add_option("--frames", pa.frames, "Frames per view")->capture_default_str();
  phantom->add_option("--hr", pa.hr, "HR detector size in pixels (multiple of 4)")->capture_default_str();
  phantom->add_option("--heldout", pa.heldout, "Held-out views between training views")->capture_default_str();
  phantom->add_option("--span", pa.span, "Angular span in degrees")->capture_default_str();
  phantom->add_option("--source-distance", pa.source_distance, "Source to isocenter, mm")->capture_default_str();
  phantom->add_option("--sdd", pa.sdd, "Source to detector, mm")->capture_default_str();
  phantom->add_option("--pitch", pa.pitch, "HR detector pixel pitch, mm")->capture_default_str();
  phantom->add_option("--branches", pa.branches, "Vessel segments")->capture_default_str();
  phantom->add_option("--blobs", pa.blobs, "Blobs per segment")->capture_default_str();
  phantom->add_option("--noise", pa.noise, "Gaussian noise sigma on LR observations")->capture_default_str();
  phantom->add_option("--seed", pa.seed, "Random seed")->capture_default_str();
  phantom->add_option("--out", pa.out, "Output directory")->required();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Reconstruct a dynamic scene from a dataset");
  trainc->add_option("--config", ta.config, "JSON run configuration");
  trainc->add_option("--data", ta.data, "Dataset directory");
  trainc->add_option("--out", ta.out, "Output directory");
  trainc->add_option("--iters", ta.iters, "Iterations");
  trainc->add_option("--seed", ta.seed, "Random seed");
  trainc->add_option("--threads", ta.threads, "Rasterizer threads");
  trainc->add_option("--sr-mode", ta.sr_mode, "off | bicubic | dir=PATH");
  trainc->add_option("--n-init", ta.n_init, "Initial kernel count");
  trainc->add_option("--init-points", ta.init_points, "Seed point cloud (x y z per line)");
  trainc->add_option("--mf-weight", ta.mf_weight, "Pseudo-label loss weight");
  trainc->add_option("--learnable-confidence", ta.learnable, "Optimize the confidence scalars");

  RenderArgs ra;
  auto* renderc = app.add_subcommand("render", "Render a checkpoint at any view and time");
  renderc->add_option("--checkpoint", ra.checkpoint, "Checkpoint file")->required();
  renderc->add_option("--data", ra.data, "Dataset directory (training and held-out views)");
  renderc->add_option("--geometry", ra.geometry, "Geometry JSON");
  renderc->add_option("--view", ra.view, "View id (default: first view)");
  renderc->add_option("--t", ra.t, "Normalized time (default: view timestamp)");
  renderc->add_option("--res", ra.res, "Output width in pixels; height keeps the aspect");
  renderc->add_option("--out", ra.out, "Output PFM")->required();
  renderc->add_option("--threads", ra.threads, "Rasterizer threads")->capture_default_str();

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Score a checkpoint against ground truth");
  evalc->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  evalc->add_option("--data", ea.data, "Dataset directory")->required();
  evalc->add_option("--split", ea.split, "train | train_lr | heldout")->capture_default_str();
  evalc->add_option("--threads", ea.threads, "Rasterizer threads")->capture_default_str();
  evalc->add_flag("--summary-only", ea.summary_only, "Omit per-image scores");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  LogScope log_scope(err);
  try {
    if (phantom->parsed()) return cmd_phantom(pa, out);
    if (trainc->parsed()) return cmd_train(ta, out);
    if (renderc->parsed()) return cmd_render(ra, out);
    if (evalc->parsed()) return cmd_eval(ea, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace dsasrgs::cli
