// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/supervision.hpp"

#include "dsasrgs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dsasrgs {

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i >= n ? period - i : i;
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

std::vector<double> gaussian_taps(int window, double sigma) {
  const int r = window / 2;
  std::vector<double> taps(window);
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - r;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

/// Separable Gaussian filter with reflect-101 borders.
class WindowFilter {
 public:
  WindowFilter(int width, int height, const SsimConfig& cfg)
      : w_(width), h_(height), taps_(gaussian_taps(cfg.window, cfg.sigma)), r_(cfg.window / 2) {}

  std::vector<double> apply(std::span<const double> in) const {
    std::vector<double> tmp(in.size(), 0.0);
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int i = 0; i <= 2 * r_; ++i) s += taps_[i] * in[idx(reflect101(x + i - r_, w_), y)];
        tmp[idx(x, y)] = s;
      }
    }
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int j = 0; j <= 2 * r_; ++j) s += taps_[j] * tmp[idx(x, reflect101(y + j - r_, h_))];
        out[idx(x, y)] = s;
      }
    }
    return out;
  }

  /// Transpose of apply().
  std::vector<double> adjoint(std::span<const double> in) const {
    std::vector<double> tmp(in.size(), 0.0);
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const double g = in[idx(x, y)];
        for (int j = 0; j <= 2 * r_; ++j) tmp[idx(x, reflect101(y + j - r_, h_))] += taps_[j] * g;
      }
    }
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const double g = tmp[idx(x, y)];
        for (int i = 0; i <= 2 * r_; ++i) out[idx(reflect101(x + i - r_, w_), y)] += taps_[i] * g;
      }
    }
    return out;
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_;
  int h_;
  std::vector<double> taps_;
  int r_;
};

void validate_ssim(const SsimConfig& cfg) {
  if (cfg.window < 3 || cfg.window % 2 == 0 || !(cfg.sigma > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "SSIM window must be odd and >= 3 with sigma > 0");
  }
}

struct SsimStats {
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
};

SsimStats ssim_stats(const WindowFilter& f, std::span<const double> a, std::span<const double> b) {
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  return {f.apply(a), f.apply(b), f.apply(aa), f.apply(bb), f.apply(ab)};
}

std::vector<double> ssim_values(std::span<const double> a, std::span<const double> b, int width,
                                int height, const SsimConfig& cfg) {
  validate_ssim(cfg);
  const WindowFilter f(width, height, cfg);
  const SsimStats s = ssim_stats(f, a, b);
  const double C1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double C2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ma = s.mu_a[i], mb = s.mu_b[i];
    const double va = s.e_aa[i] - ma * ma;
    const double vb = s.e_bb[i] - mb * mb;
    const double cov = s.e_ab[i] - ma * mb;
    out[i] = ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) /
             ((ma * ma + mb * mb + C1) * (va + vb + C2));
  }
  return out;
}

std::vector<double> to_double(const ProjectionImage& img) {
  return {img.pixels.begin(), img.pixels.end()};
}

ProjectionImage to_image(std::span<const double> v, int width, int height, ImageRole role) {
  ProjectionImage out(width, height, role);
  for (std::size_t i = 0; i < v.size(); ++i) out.pixels[i] = static_cast<float>(v[i]);
  return out;
}

std::vector<double> box_downsample(std::span<const double> in, int width, int height, int factor) {
  const int lw = width / factor;
  const int lh = height / factor;
  std::vector<double> out(static_cast<std::size_t>(lw) * lh, 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < lh; ++y) {
    for (int x = 0; x < lw; ++x) {
      double s = 0.0;
      for (int j = 0; j < factor; ++j) {
        for (int i = 0; i < factor; ++i) {
          s += in[static_cast<std::size_t>(y * factor + j) * width + x * factor + i];
        }
      }
      out[static_cast<std::size_t>(y) * lw + x] = s * inv;
    }
  }
  return out;
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

/// Per output sample: four source indices (edge-clamped) and weights.
struct CubicTaps {
  std::vector<std::array<int, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

CubicTaps cubic_taps(int n_in, int factor) {
  const int n_out = n_in * factor;
  CubicTaps taps;
  taps.index.resize(n_out);
  taps.weight.resize(n_out);
  for (int o = 0; o < n_out; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      taps.index[o][k] = clamp_index(static_cast<int>(base) - 1 + k, n_in);
      taps.weight[o][k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

std::vector<double> gaussian_blur_clamped(std::span<const double> in, int width, int height,
                                          double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const std::vector<double> taps = gaussian_taps(2 * r + 1, sigma);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += taps[i + r] * in[static_cast<std::size_t>(y) * width + clamp_index(x + i, width)];
      tmp[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int j = -r; j <= r; ++j) s += taps[j + r] * tmp[static_cast<std::size_t>(clamp_index(y + j, height)) * width + x];
      out[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// (1 - l) * mean|x - target| + l * (1 - SSIM(x, target)) and d/dx.
LossValue fidelity_loss(std::span<const double> x, const ProjectionImage& target,
                        const LossConfig& cfg, const SsimConfig& ssim_cfg) {
  const std::vector<double> tgt = to_double(target);
  const double n = static_cast<double>(x.size());
  LossValue out;
  out.grad.assign(x.size(), 0.0);
  double l1 = 0.0;
  const double l1_scale = (1.0 - cfg.lambda_ssim) / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - tgt[i];
    l1 += std::abs(d);
    out.grad[i] = d > 0.0 ? l1_scale : (d < 0.0 ? -l1_scale : 0.0);
  }
  out.l1 = l1 / n;
  const SsimWithGrad s = ssim_mean_with_grad(x, tgt, target.width, target.height, ssim_cfg);
  if (cfg.lambda_ssim != 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] -= cfg.lambda_ssim * s.grad_a[i];
  }
  out.ssim = s.value;
  out.value = (1.0 - cfg.lambda_ssim) * out.l1 + cfg.lambda_ssim * (1.0 - s.value);
  return out;
}

}  // namespace

void validate(const ConfidenceConfig& cfg) {
  if (cfg.ssim_window < 3 || cfg.ssim_window % 2 == 0 || cfg.texture_window < 3 ||
      cfg.texture_window % 2 == 0 || !(cfg.ssim_sigma > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "confidence windows must be odd and >= 3");
  }
}

void validate(const LossConfig& cfg) {
  if (!(cfg.lambda_ssim >= 0.0 && cfg.lambda_ssim <= 1.0) ||
      !(cfg.mf_weight >= 0.0 && cfg.mf_weight <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "lambda_ssim and mf_weight must lie in [0, 1]");
  }
}

ProjectionImage upsample_bicubic(const ProjectionImage& img, int factor) {
  if (factor < 1 || img.width < 1 || img.height < 1) {
    throw Error(ErrorCode::DimensionMismatch, "upsample needs a non-empty image and factor >= 1");
  }
  const int ow = img.width * factor;
  const int oh = img.height * factor;
  const CubicTaps tx = cubic_taps(img.width, factor);
  const CubicTaps ty = cubic_taps(img.height, factor);
  std::vector<double> rows(static_cast<std::size_t>(ow) * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += tx.weight[x][k] * img.at(tx.index[x][k], y);
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  ProjectionImage out(ow, oh, ImageRole::lr_up);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += ty.weight[y][k] * rows[static_cast<std::size_t>(ty.index[y][k]) * ow + x];
      out.at(x, y) = static_cast<float>(s);
    }
  }
  return out;
}

ProjectionImage downsample_area(const ProjectionImage& img, int factor) {
  if (factor < 1 || img.width % factor != 0 || img.height % factor != 0 || img.width < factor) {
    throw Error(ErrorCode::DimensionMismatch,
                "downsample: " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " not divisible by " + std::to_string(factor));
  }
  const std::vector<double> in = to_double(img);
  return to_image(box_downsample(in, img.width, img.height, factor), img.width / factor,
                  img.height / factor, ImageRole::render_lr);
}

ProjectionImage ssim_map(const ProjectionImage& a, const ProjectionImage& b, const SsimConfig& cfg) {
  require_same_dims(a, b, "ssim_map");
  const auto va = to_double(a);
  const auto vb = to_double(b);
  return to_image(ssim_values(va, vb, a.width, a.height, cfg), a.width, a.height, ImageRole::generic);
}

double ssim_mean(const ProjectionImage& a, const ProjectionImage& b, const SsimConfig& cfg) {
  require_same_dims(a, b, "ssim_mean");
  const auto va = to_double(a);
  const auto vb = to_double(b);
  const auto m = ssim_values(va, vb, a.width, a.height, cfg);
  double s = 0.0;
  for (double v : m) s += v;
  return s / static_cast<double>(m.size());
}

SsimWithGrad ssim_mean_with_grad(std::span<const double> a, std::span<const double> b, int width,
                                 int height, const SsimConfig& cfg) {
  validate_ssim(cfg);
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::DimensionMismatch, "ssim_mean_with_grad: size mismatch");
  }
  const WindowFilter f(width, height, cfg);
  const SsimStats s = ssim_stats(f, a, b);
  const double C1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double C2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  const double inv_n = 1.0 / static_cast<double>(a.size());

  std::vector<double> d_mu(a.size()), d_eaa(a.size()), d_eab(a.size());
  SsimWithGrad out;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ma = s.mu_a[i], mb = s.mu_b[i];
    const double va = s.e_aa[i] - ma * ma;
    const double vb = s.e_bb[i] - mb * mb;
    const double cov = s.e_ab[i] - ma * mb;
    const double A1 = 2.0 * ma * mb + C1;
    const double A2 = 2.0 * cov + C2;
    const double B1 = ma * ma + mb * mb + C1;
    const double B2 = va + vb + C2;
    const double S = (A1 * A2) / (B1 * B2);
    total += S;
    d_mu[i] = inv_n * (2.0 * mb * (A2 - A1) / (B1 * B2) - 2.0 * ma * S * (1.0 / B1 - 1.0 / B2));
    d_eaa[i] = inv_n * (-S / B2);
    d_eab[i] = inv_n * (2.0 * A1 / (B1 * B2));
  }
  out.value = total * inv_n;
  const auto g_mu = f.adjoint(d_mu);
  const auto g_eaa = f.adjoint(d_eaa);
  const auto g_eab = f.adjoint(d_eab);
  out.grad_a.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.grad_a[i] = g_mu[i] + 2.0 * a[i] * g_eaa[i] + b[i] * g_eab[i];
  }
  return out;
}

ProjectionImage texture_richness(const ProjectionImage& img, const ConfidenceConfig& cfg) {
  validate(cfg);
  const int w = img.width;
  const int h = img.height;
  auto px = [&](int x, int y) -> double { return img.at(clamp_index(x, w), clamp_index(y, h)); };
  std::vector<double> mag(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
      mag[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  }
  const int r = cfg.texture_window / 2;
  const double inv_area = 1.0 / (cfg.texture_window * cfg.texture_window);
  std::vector<double> avg(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = -r; j <= r; ++j) {
        for (int i = -r; i <= r; ++i) {
          s += mag[static_cast<std::size_t>(clamp_index(y + j, h)) * w + clamp_index(x + i, w)];
        }
      }
      avg[static_cast<std::size_t>(y) * w + x] = s * inv_area;
    }
  }
  std::vector<double> sorted = avg;
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
  const double p99 = sorted[rank];
  ProjectionImage out(w, h, ImageRole::generic);
  if (!(p99 >= 1e-12)) return out;
  for (std::size_t i = 0; i < avg.size(); ++i) {
    out.pixels[i] = static_cast<float>(std::clamp(avg[i] / p99, 0.0, 1.0));
  }
  return out;
}

ProjectionImage confidence_map(const ProjectionImage& sr, const ProjectionImage& lr_up,
                               const ConfidenceConfig& cfg) {
  require_same_dims(sr, lr_up, "confidence_map");
  validate(cfg);
  const auto a = to_double(sr);
  const auto b = to_double(lr_up);
  const auto s = ssim_values(a, b, sr.width, sr.height, cfg.ssim());
  const ProjectionImage tex = texture_richness(sr, cfg);
  ProjectionImage out(sr.width, sr.height, ImageRole::generic);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.pixels[i] = static_cast<float>(sigmoid(cfg.alpha_c * s[i] + cfg.beta_c * tex.pixels[i]));
  }
  return out;
}

ProjectionImage teaching_image(const ProjectionImage& sr, const ProjectionImage& lr_up,
                               const ProjectionImage& confidence) {
  require_same_dims(sr, lr_up, "teaching_image");
  require_same_dims(sr, confidence, "teaching_image");
  ProjectionImage out(sr.width, sr.height, ImageRole::teach);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double c = confidence.pixels[i];
    out.pixels[i] = static_cast<float>(c * sr.pixels[i] + (1.0 - c) * lr_up.pixels[i]);
  }
  return out;
}

LossValue loss_gt(const ProjectionImage& render_hr, const ProjectionImage& lr,
                  const LossConfig& cfg, const SsimConfig& ssim) {
  if (render_hr.width != lr.width * kSrFactor || render_hr.height != lr.height * kSrFactor) {
    throw Error(ErrorCode::DimensionMismatch, "loss_gt: LR dims must be HR dims / 4");
  }
  const auto hr = to_double(render_hr);
  const auto down = box_downsample(hr, render_hr.width, render_hr.height, kSrFactor);
  LossValue lr_loss = fidelity_loss(down, lr, cfg, ssim);
  LossValue out;
  out.value = lr_loss.value;
  out.l1 = lr_loss.l1;
  out.ssim = lr_loss.ssim;
  out.grad.assign(hr.size(), 0.0);
  const double inv = 1.0 / (kSrFactor * kSrFactor);
  for (int y = 0; y < render_hr.height; ++y) {
    for (int x = 0; x < render_hr.width; ++x) {
      out.grad[static_cast<std::size_t>(y) * render_hr.width + x] =
          lr_loss.grad[static_cast<std::size_t>(y / kSrFactor) * lr.width + x / kSrFactor] * inv;
    }
  }
  return out;
}

LossValue loss_sr(const ProjectionImage& render_hr, const ProjectionImage& teach,
                  const LossConfig& cfg, const SsimConfig& ssim) {
  require_same_dims(render_hr, teach, "loss_sr");
  const auto hr = to_double(render_hr);
  return fidelity_loss(hr, teach, cfg, ssim);
}

double total_loss(double loss_gt, double loss_sr, const LossConfig& cfg) {
  return loss_gt + cfg.mf_weight * loss_sr;
}

ProjectionImage BicubicSharpenProvider::apply(const ProjectionImage& lr, int, int) const {
  const ProjectionImage up = upsample_bicubic(lr, kSrFactor);
  const auto v = to_double(up);
  const auto blurred = gaussian_blur_clamped(v, up.width, up.height, sigma_);
  ProjectionImage out(up.width, up.height, ImageRole::sr);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.pixels[i] = static_cast<float>(v[i] + amount_ * (v[i] - blurred[i]));
  }
  return out;
}

std::string frame_file_name(int view_id, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%d_%04d.pfm", view_id, frame);
  return buf;
}

std::filesystem::path FileIngestProvider::path_for(int view_id, int frame) const {
  return dir_ / frame_file_name(view_id, frame);
}

ProjectionImage FileIngestProvider::apply(const ProjectionImage& lr, int view_id, int frame) const {
  const auto path = path_for(view_id, frame);
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingPseudoLabel, path.string());
  }
  ProjectionImage img = read_pfm(path);
  if (img.width != lr.width * kSrFactor || img.height != lr.height * kSrFactor) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": pseudo-label must be 4x the LR dims");
  }
  img.role = ImageRole::sr;
  return img;
}

ProjectionImage sr_apply(const SrProvider& provider, const ProjectionImage& lr, int view_id, int frame) {
  return provider.apply(lr, view_id, frame);
}

}  // namespace dsasrgs
