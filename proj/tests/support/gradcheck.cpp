// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "gradcheck.hpp"

#include "oracles.hpp"

#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/rasterizer.hpp"
#include "dsasrgs/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <tuple>
#include <random>

namespace dsasrgs::oracle {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& g : groups) w = std::max(w, g.rel_error);
  return w;
}

namespace {

constexpr int kSize = 32;
constexpr double kNormFloor = 1e-9;

struct Problem {
  Scene scene;
  AttenuationField field;
  CameraView view;
  double t = 0.0;
  ProjectionImage lr;
  ProjectionImage teach;
  LossConfig loss;
};

double objective(const Problem& p) {
  const RenderResult r = render(p.scene, p.field, p.view, p.t, kSize, kSize);
  const LossValue g = loss_gt(r.image, p.lr, p.loss);
  const LossValue s = loss_sr(r.image, p.teach, p.loss);
  return total_loss(g.value, s.value, p.loss);
}

std::vector<std::vector<int>> signatures(const Problem& p) {
  std::vector<std::vector<int>> out;
  for (const auto& k : p.scene.kernels) out.push_back(field_smoothness_signature(p.field, k.mean(), p.t));
  return out;
}

/// Derivative at *x from samples at offsets d1, d2 on one side (second order,
/// unequal spacing allowed).
double one_sided(double f0, double f1, double f2, double d1, double d2) {
  return -(d1 + d2) / (d1 * d2) * f0 + d2 / (d1 * (d2 - d1)) * f1 - d1 / (d2 * (d2 - d1)) * f2;
}

/// Derivative of the objective in *x, with perturbations as stored in f32.
/// Central differences when the stencil stays inside the smooth piece of the
/// field that contains *x (same hidden-unit states and grid cells); otherwise a
/// one-sided stencil on the side that does, then smaller steps. nullopt if
/// every attempt straddles a kink.
std::optional<double> central(Problem& p, float* x, double h) {
  const float orig = *x;
  const auto s0 = signatures(p);
  auto sample = [&](double offset) {
    *x = static_cast<float>(orig + offset);
    const double d = static_cast<double>(*x) - orig;
    const double f = objective(p);
    const bool smooth = signatures(p) == s0;
    *x = orig;
    return std::tuple{d, f, smooth};
  };
  for (int attempt = 0; attempt < 4; ++attempt, h *= 0.25) {
    const auto [du, fu, su] = sample(h);
    const auto [dd, fd, sd] = sample(-h);
    if (su && sd) return (fu - fd) / (du - dd);
    for (double dir : {1.0, -1.0}) {
      const auto [d1, f1, s1] = sample(dir * h);
      const auto [d2, f2, s2] = sample(dir * 2 * h);
      if (s1 && s2) return one_sided(objective(p), f1, f2, d1, d2);
    }
  }
  return std::nullopt;
}

struct Coord {
  float* param;
  double analytic;
};

GroupError compare(Problem& p, const std::string& name, const std::vector<Coord>& coords, double h) {
  double diff2 = 0.0, num2 = 0.0, ana2 = 0.0;
  GroupError e;
  for (const auto& c : coords) {
    const auto numeric = central(p, c.param, h);
    if (!numeric) {
      ++e.skipped;
      continue;
    }
    const double n = *numeric;
    diff2 += (n - c.analytic) * (n - c.analytic);
    num2 += n * n;
    ana2 += c.analytic * c.analytic;
  }
  e.group = name;
  e.coords = static_cast<int>(coords.size()) - e.skipped;
  e.numeric_norm = std::sqrt(num2);
  e.rel_error = std::sqrt(diff2) / std::max({std::sqrt(num2), std::sqrt(ana2), kNormFloor});
  return e;
}

/// The `k` entries of largest |grad| (ties by index) plus `k` random ones.
std::vector<std::size_t> pick(const std::vector<double>& grad, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(grad.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t top = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + top, idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(grad[a]) > std::abs(grad[b]) || (std::abs(grad[a]) == std::abs(grad[b]) && a < b);
  });
  std::vector<std::size_t> out(idx.begin(), idx.begin() + top);
  std::uniform_int_distribution<std::size_t> any(0, grad.size() - 1);
  for (std::size_t i = 0; i < k && !grad.empty(); ++i) out.push_back(any(rng));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Each target pixel sits 0.05..0.3 above or below the reference so no
/// finite-difference stencil straddles an L1 kink.
ProjectionImage offset_target(const ProjectionImage& ref, ImageRole role, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> gap(0.05f, 0.3f);
  std::bernoulli_distribution above(0.5);
  ProjectionImage out(ref.width, ref.height, role);
  for (std::size_t i = 0; i < ref.size(); ++i) out.pixels[i] = ref.pixels[i] + (above(rng) ? gap(rng) : -gap(rng));
  return out;
}

}  // namespace

GradCheckReport check_gradients(std::uint64_t seed, int max_kernels) {
  std::mt19937_64 rng(seed);
  Problem p;
  const int n = std::uniform_int_distribution<int>(1, max_kernels)(rng);
  p.scene = random_scene(rng, n, 12.0, 3.0, 10.0);
  p.view = frontal_view(kSize, kSize, 200.0, 500.0);
  p.t = std::uniform_real_distribution<double>(0.05, 0.95)(rng);

  FieldConfig fc;
  fc.enc3d.table_size_log2 = 12;
  fc.enc4d.table_size_log2 = 12;
  fc.initial_rho = 0.3f;
  p.field = init_field(fc, p.scene.bbox, seed + 17);
  std::uniform_real_distribution<float> tab(-0.5f, 0.5f);
  for (auto* enc : {&p.field.enc3d, &p.field.enc4d}) {
    for (auto& table : enc->tables) {
      for (auto& v : table) v = tab(rng);
    }
  }

  const RenderResult r = render(p.scene, p.field, p.view, p.t, kSize, kSize);
  p.teach = offset_target(r.image, ImageRole::teach, rng);
  p.lr = offset_target(downsample_area(r.image), ImageRole::lr_obs, rng);

  const LossValue g = loss_gt(r.image, p.lr, p.loss);
  const LossValue s = loss_sr(r.image, p.teach, p.loss);
  std::vector<double> d_image = g.grad;
  for (std::size_t i = 0; i < d_image.size(); ++i) d_image[i] += p.loss.mf_weight * s.grad[i];
  const KernelGrads kg = render_backward(p.scene, p.field, r.state, d_image, kSize, kSize);

  GradCheckReport report;
  report.n_kernels = n;

  std::vector<Coord> mu, ls, rot;
  for (int i = 0; i < n; ++i) {
    auto& k = p.scene.kernels[i];
    for (int d = 0; d < 3; ++d) {
      mu.push_back({&k.mu[d], kg.d_mu[i][d]});
      ls.push_back({&k.log_scale[d], kg.d_log_scale[i][d]});
    }
    for (int d = 0; d < 4; ++d) rot.push_back({&k.rot[d], kg.d_rot[i][d]});
  }
  report.groups.push_back(compare(p, "mu", mu, 2e-3));
  report.groups.push_back(compare(p, "log_scale", ls, 1e-3));
  report.groups.push_back(compare(p, "rot", rot, 1e-3));

  std::vector<Coord> tables;
  for (int e = 0; e < 2; ++e) {
    auto& enc = e == 0 ? p.field.enc3d : p.field.enc4d;
    const auto& grads = e == 0 ? kg.field.enc3d : kg.field.enc4d;
    for (std::size_t l = 0; l < enc.tables.size(); l += 3) {
      for (std::size_t j : pick(grads[l], 2, rng)) tables.push_back({&enc.tables[l][j], grads[l][j]});
    }
  }
  report.groups.push_back(compare(p, "hash_tables", tables, 1e-3));

  std::vector<Coord> mlp;
  for (int l = 0; l < p.field.mlp.layers(); ++l) {
    for (std::size_t j : pick(kg.field.weights[l], 3, rng)) {
      mlp.push_back({&p.field.mlp.weights[l][j], kg.field.weights[l][j]});
    }
    for (std::size_t j : pick(kg.field.biases[l], 1, rng)) {
      mlp.push_back({&p.field.mlp.biases[l][j], kg.field.biases[l][j]});
    }
  }
  report.groups.push_back(compare(p, "mlp", mlp, 1e-4));
  return report;
}

}  // namespace dsasrgs::oracle
