// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/dataset.hpp"

#include "dsasrgs/errors.hpp"
#include "dsasrgs/supervision.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace dsasrgs {

namespace fs = std::filesystem;
using nlohmann::json;

std::string manifest_to_json(const Manifest& m) {
  json doc;
  doc["hr_dims"] = {m.hr_width, m.hr_height};
  doc["lr_dims"] = {m.lr_width, m.lr_height};
  doc["n_views"] = m.n_views;
  doc["n_frames"] = m.n_frames;
  doc["n_heldout_views"] = m.n_heldout_views;
  doc["normalization_scale"] = m.normalization_scale;
  doc["frame_times"] = m.frame_times;
  doc["bbox"] = {{"lo", {m.bbox.lo.x(), m.bbox.lo.y(), m.bbox.lo.z()}},
                 {"hi", {m.bbox.hi.x(), m.bbox.hi.y(), m.bbox.hi.z()}}};
  doc["file_naming"] = {{"hr", m.hr_pattern}, {"lr", m.lr_pattern}};
  doc["seed"] = m.seed;
  doc["noise_sigma"] = m.noise_sigma;
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    Manifest m;
    m.hr_width = doc.at("hr_dims").at(0).get<int>();
    m.hr_height = doc.at("hr_dims").at(1).get<int>();
    m.lr_width = doc.at("lr_dims").at(0).get<int>();
    m.lr_height = doc.at("lr_dims").at(1).get<int>();
    m.n_views = doc.at("n_views").get<int>();
    m.n_frames = doc.at("n_frames").get<int>();
    m.n_heldout_views = doc.value("n_heldout_views", 0);
    m.normalization_scale = doc.at("normalization_scale").get<double>();
    m.frame_times = doc.at("frame_times").get<std::vector<double>>();
    if (doc.contains("bbox")) {
      const auto& b = doc.at("bbox");
      for (int d = 0; d < 3; ++d) {
        m.bbox.lo[d] = b.at("lo").at(d).get<double>();
        m.bbox.hi[d] = b.at("hi").at(d).get<double>();
      }
    }
    m.hr_pattern = doc.at("file_naming").at("hr").get<std::string>();
    m.lr_pattern = doc.at("file_naming").at("lr").get<std::string>();
    m.seed = doc.value("seed", std::uint64_t{0});
    m.noise_sigma = doc.value("noise_sigma", 0.0);
    if (m.n_views < 1 || m.n_frames < 1 || static_cast<int>(m.frame_times.size()) != m.n_frames ||
        m.lr_width * kSrFactor != m.hr_width || m.lr_height * kSrFactor != m.hr_height) {
      throw Error(ErrorCode::FormatError, "manifest fields are inconsistent");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("manifest JSON: ") + e.what());
  }
}

double frame_time(int frame, int n_frames, double fallback) {
  if (n_frames <= 1) return fallback;
  return static_cast<double>(frame) / (n_frames - 1);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

/// Raw (unnormalized) HR frame from precomputed footprints.
std::vector<double> compose_frame(const std::vector<PhantomBlob>& blobs,
                                  const std::vector<BlobFootprint>& footprints,
                                  const BolusParams& bolus, double t, std::size_t n_pixels) {
  std::vector<double> acc(n_pixels, 0.0);
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    const double c = bolus_curve(t, blobs[b].arrival, bolus);
    if (c == 0.0) continue;
    const auto& fp = footprints[b];
    for (std::size_t k = 0; k < fp.pixel.size(); ++k) acc[fp.pixel[k]] += c * fp.value[k];
  }
  return acc;
}

ProjectionImage to_image(const std::vector<double>& raw, int w, int h, double scale, ImageRole role) {
  ProjectionImage img(w, h, role);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i] * scale);
  return img;
}

}  // namespace

Manifest make_dataset(const std::vector<PhantomBlob>& blobs, const BolusParams& bolus,
                      const Trajectory& train, const Trajectory* heldout,
                      const DatasetWriteOptions& opt, const fs::path& out_dir) {
  validate(bolus);
  if (opt.n_frames < 1 || opt.hr_width < kSrFactor || opt.hr_height < kSrFactor ||
      opt.hr_width % kSrFactor != 0 || opt.hr_height % kSrFactor != 0 || !(opt.noise_sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "HR dims must be positive multiples of 4 and n_frames >= 1");
  }
  if (train.views.empty()) throw Error(ErrorCode::InvalidConfig, "no training views");

  Manifest m;
  m.hr_width = opt.hr_width;
  m.hr_height = opt.hr_height;
  m.lr_width = opt.hr_width / kSrFactor;
  m.lr_height = opt.hr_height / kSrFactor;
  m.n_views = static_cast<int>(train.views.size());
  m.n_frames = opt.n_frames;
  m.n_heldout_views = heldout ? static_cast<int>(heldout->views.size()) : 0;
  m.bbox = opt.bbox;
  m.seed = opt.seed;
  m.noise_sigma = opt.noise_sigma;
  for (int f = 0; f < opt.n_frames; ++f) m.frame_times.push_back(frame_time(f, opt.n_frames));

  const std::size_t n_pixels = static_cast<std::size_t>(opt.hr_width) * opt.hr_height;
  auto view_time = [&](const CameraView& v, int f) { return frame_time(f, opt.n_frames, v.timestamp); };

  // Pass 1: global max over every HR image that will be written.
  double raw_max = 0.0;
  auto scan = [&](const std::vector<CameraView>& views) {
    for (const auto& v : views) {
      const auto fps = analytic_footprints(blobs, v, opt.hr_width, opt.hr_height);
      for (int f = 0; f < opt.n_frames; ++f) {
        const auto raw = compose_frame(blobs, fps, bolus, view_time(v, f), n_pixels);
        raw_max = std::max(raw_max, *std::max_element(raw.begin(), raw.end()));
      }
    }
  };
  scan(train.views);
  if (heldout) scan(heldout->views);
  m.normalization_scale = raw_max > 0.0 ? 1.0 / raw_max : 1.0;

  make_dirs(out_dir / "hr");
  make_dirs(out_dir / "lr");
  std::mt19937_64 rng(opt.seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> noise(0.0, opt.noise_sigma > 0.0 ? opt.noise_sigma : 1.0);

  for (const auto& v : train.views) {
    const auto fps = analytic_footprints(blobs, v, opt.hr_width, opt.hr_height);
    for (int f = 0; f < opt.n_frames; ++f) {
      const auto raw = compose_frame(blobs, fps, bolus, view_time(v, f), n_pixels);
      const ProjectionImage hr = to_image(raw, opt.hr_width, opt.hr_height, m.normalization_scale,
                                          ImageRole::generic);
      ProjectionImage lr = downsample_area(hr);
      lr.role = ImageRole::lr_obs;
      if (opt.noise_sigma > 0.0) {
        for (float& p : lr.pixels) p = static_cast<float>(p + noise(rng));
      }
      const std::string name = frame_file_name(v.view_id, f);
      write_pfm(out_dir / "hr" / name, hr);
      write_pfm(out_dir / "lr" / name, lr);
    }
  }
  save_geometry(out_dir / "geometry.json", train.views);

  if (heldout && !heldout->views.empty()) {
    make_dirs(out_dir / "heldout" / "hr");
    for (const auto& v : heldout->views) {
      const auto fps = analytic_footprints(blobs, v, opt.hr_width, opt.hr_height);
      for (int f = 0; f < opt.n_frames; ++f) {
        const auto raw = compose_frame(blobs, fps, bolus, view_time(v, f), n_pixels);
        write_pfm(out_dir / "heldout" / "hr" / frame_file_name(v.view_id, f),
                  to_image(raw, opt.hr_width, opt.hr_height, m.normalization_scale, ImageRole::generic));
      }
    }
    save_geometry(out_dir / "heldout" / "geometry.json", heldout->views);
  }
  write_text(out_dir / "manifest.json", manifest_to_json(m));
  spdlog::info("dataset: {} views x {} frames written to {} (scale {:.6g})", m.n_views, m.n_frames,
               out_dir.string(), m.normalization_scale);
  return m;
}

fs::path Dataset::hr_path(int view_index, int frame) const {
  return root / "hr" / frame_file_name(views.at(view_index).view_id, frame);
}

fs::path Dataset::lr_path(int view_index, int frame) const {
  return root / "lr" / frame_file_name(views.at(view_index).view_id, frame);
}

fs::path Dataset::heldout_hr_path(int view_index, int frame) const {
  return root / "heldout" / "hr" / frame_file_name(heldout_views.at(view_index).view_id, frame);
}

ProjectionImage Dataset::load_hr(int view_index, int frame) const {
  auto img = read_pfm(hr_path(view_index, frame));
  if (img.width != manifest.hr_width || img.height != manifest.hr_height) {
    throw Error(ErrorCode::DimensionMismatch, hr_path(view_index, frame).string() + " has wrong dims");
  }
  return img;
}

ProjectionImage Dataset::load_lr(int view_index, int frame) const {
  auto img = read_pfm(lr_path(view_index, frame));
  if (img.width != manifest.lr_width || img.height != manifest.lr_height) {
    throw Error(ErrorCode::DimensionMismatch, lr_path(view_index, frame).string() + " has wrong dims");
  }
  img.role = ImageRole::lr_obs;
  return img;
}

ProjectionImage Dataset::load_heldout_hr(int view_index, int frame) const {
  auto img = read_pfm(heldout_hr_path(view_index, frame));
  if (img.width != manifest.hr_width || img.height != manifest.hr_height) {
    throw Error(ErrorCode::DimensionMismatch,
                heldout_hr_path(view_index, frame).string() + " has wrong dims");
  }
  return img;
}

double Dataset::time_of(int frame, int view_index) const {
  if (manifest.n_frames <= 1) return views.at(view_index).timestamp;
  return manifest.frame_times.at(frame);
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  ds.manifest = manifest_from_json(read_text(root / "manifest.json"));
  ds.views = load_geometry(root / "geometry.json");
  if (static_cast<int>(ds.views.size()) != ds.manifest.n_views) {
    throw Error(ErrorCode::FormatError, "geometry.json view count disagrees with the manifest");
  }
  if (ds.manifest.n_heldout_views > 0) {
    ds.heldout_views = load_geometry(root / "heldout" / "geometry.json");
    if (static_cast<int>(ds.heldout_views.size()) != ds.manifest.n_heldout_views) {
      throw Error(ErrorCode::FormatError, "held-out geometry count disagrees with the manifest");
    }
  }
  return ds;
}

}  // namespace dsasrgs
