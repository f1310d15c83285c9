// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/dnaf.hpp"

#include "dsasrgs/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace dsasrgs {

namespace {

constexpr int kMaxDims = 4;
constexpr int kMaxWidth = 256;

void validate_grid(const HashGridConfig& c) {
  if (c.dims < 1 || c.dims > kMaxDims || c.levels < 1 || c.features_per_level < 1 ||
      c.table_size_log2 < 1 || c.table_size_log2 > 30 || c.base_resolution < 1 ||
      !(c.growth_factor > 1.0f)) {
    throw Error(ErrorCode::InvalidConfig, "invalid hash grid configuration");
  }
}

/// Calls fn(slot, weight, dweight_dx) for the 2^dims cell corners around x.
/// dweight_dx is w.r.t. the normalized coordinate, not the scaled one.
template <typename Fn>
void visit_corners(const HashGridEncoding& enc, std::span<const double> x, int level, Fn&& fn) {
  const int dims = enc.config.dims;
  const double res = enc.resolution(level);
  std::array<std::int64_t, kMaxDims> base{};
  std::array<double, kMaxDims> frac{};
  for (int d = 0; d < dims; ++d) {
    const double pos = x[d] * res;
    const double fl = std::floor(pos);
    base[d] = static_cast<std::int64_t>(fl);
    frac[d] = pos - fl;
  }
  std::array<std::int64_t, kMaxDims> idx{};
  std::array<double, kMaxDims> dw{};
  for (int corner = 0; corner < (1 << dims); ++corner) {
    double w = 1.0;
    for (int d = 0; d < dims; ++d) {
      const bool hi = (corner >> d) & 1;
      idx[d] = base[d] + (hi ? 1 : 0);
      w *= hi ? frac[d] : 1.0 - frac[d];
    }
    for (int d = 0; d < dims; ++d) {
      double p = (corner >> d) & 1 ? res : -res;
      for (int e = 0; e < dims; ++e) {
        if (e == d) continue;
        p *= (corner >> e) & 1 ? frac[e] : 1.0 - frac[e];
      }
      dw[d] = p;
    }
    fn(hash_slot(std::span<const std::int64_t>(idx.data(), dims), enc.config.table_size_log2), w,
       std::span<const double>(dw.data(), dims));
  }
}

struct NormalizedInput {
  std::array<double, 4> x{};
  std::array<bool, 4> inside{};  // derivative passes only where not clamped
  std::array<double, 3> inv_extent{};
};

NormalizedInput normalize(const AttenuationField& field, const Eigen::Vector3d& mu, double t) {
  NormalizedInput in;
  const Eigen::Vector3d ext = field.bbox.extent();
  for (int d = 0; d < 3; ++d) {
    const double v = (mu[d] - field.bbox.lo[d]) / ext[d];
    in.inside[d] = v >= 0.0 && v <= 1.0;
    in.x[d] = std::clamp(v, 0.0, 1.0);
    in.inv_extent[d] = 1.0 / ext[d];
  }
  in.x[3] = std::clamp(t, 0.0, 1.0);
  in.inside[3] = true;
  return in;
}

/// Forward activations kept for the backward pass.
struct MlpTrace {
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = post-activation
  std::vector<std::vector<double>> pre;  // pre-activation of layer l
  double rho = 0.0;
};

void encode_into(const AttenuationField& field, const NormalizedInput& in, std::vector<double>& features) {
  features.assign(field.feature_dim(), 0.0);
  encode(field.enc3d, std::span<const double>(in.x.data(), 3),
         std::span<double>(features.data(), field.enc3d.output_dim()));
  encode(field.enc4d, std::span<const double>(in.x.data(), 4),
         std::span<double>(features.data() + field.enc3d.output_dim(), field.enc4d.output_dim()));
}

MlpTrace run_mlp(const AttenuationMLP& mlp, std::vector<double> input) {
  MlpTrace tr;
  tr.act.push_back(std::move(input));
  for (int l = 0; l < mlp.layers(); ++l) {
    const int n_in = mlp.widths[l];
    const int n_out = mlp.widths[l + 1];
    const auto& W = mlp.weights[l];
    const auto& b = mlp.biases[l];
    const auto& h = tr.act.back();
    std::vector<double> z(n_out);
    for (int o = 0; o < n_out; ++o) {
      double s = b[o];
      const float* row = &W[static_cast<std::size_t>(o) * n_in];
      for (int i = 0; i < n_in; ++i) s += static_cast<double>(row[i]) * h[i];
      z[o] = s;
    }
    std::vector<double> a(n_out);
    const bool last = l + 1 == mlp.layers();
    for (int o = 0; o < n_out; ++o) a[o] = last ? softplus(z[o]) : std::max(z[o], 0.0);
    tr.pre.push_back(std::move(z));
    tr.act.push_back(std::move(a));
  }
  tr.rho = tr.act.back()[0];
  return tr;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Shared backward: MLP parameter grads go to d_weights/d_biases (added),
/// table grads to `table_sink(encoding, level, entry, value)`.
template <typename TableSink>
Eigen::Vector3d backward_impl(const AttenuationField& field, const Eigen::Vector3d& mu, double t,
                              double d_rho, std::vector<std::vector<double>>& d_weights,
                              std::vector<std::vector<double>>& d_biases, TableSink&& table_sink,
                              double* rho_out) {
  const NormalizedInput in = normalize(field, mu, checked_time(t));
  std::vector<double> features;
  encode_into(field, in, features);
  const MlpTrace tr = run_mlp(field.mlp, features);
  if (rho_out) *rho_out = tr.rho;

  const auto& mlp = field.mlp;
  std::vector<double> grad_out = {d_rho * sigmoid(tr.pre.back()[0])};
  for (int l = mlp.layers() - 1; l >= 0; --l) {
    const int n_in = mlp.widths[l];
    const int n_out = mlp.widths[l + 1];
    if (l + 1 < mlp.layers()) {
      for (int o = 0; o < n_out; ++o) {
        if (!(tr.pre[l][o] > 0.0)) grad_out[o] = 0.0;
      }
    }
    const auto& h = tr.act[l];
    auto& dW = d_weights[l];
    auto& db = d_biases[l];
    const auto& W = mlp.weights[l];
    std::vector<double> grad_in(n_in, 0.0);
    for (int o = 0; o < n_out; ++o) {
      const double g = grad_out[o];
      if (g == 0.0) continue;
      db[o] += g;
      double* dw_row = &dW[static_cast<std::size_t>(o) * n_in];
      const float* w_row = &W[static_cast<std::size_t>(o) * n_in];
      for (int i = 0; i < n_in; ++i) {
        dw_row[i] += g * h[i];
        grad_in[i] += g * w_row[i];
      }
    }
    grad_out = std::move(grad_in);
  }

  // grad_out now holds d/d features.
  std::array<double, 4> d_x{};
  int offset = 0;
  for (int e = 0; e < 2; ++e) {
    const HashGridEncoding& enc = e == 0 ? field.enc3d : field.enc4d;
    const int F = enc.config.features_per_level;
    const int dims = enc.config.dims;
    for (int level = 0; level < enc.config.levels; ++level) {
      const double* g = &grad_out[offset + level * F];
      const auto& table = enc.tables[level];
      visit_corners(enc, std::span<const double>(in.x.data(), dims), level,
                    [&](std::uint32_t slot, double w, std::span<const double> dw) {
                      double dot = 0.0;
                      for (int f = 0; f < F; ++f) {
                        const std::uint32_t entry = slot * F + f;
                        table_sink(e, level, entry, w * g[f]);
                        dot += static_cast<double>(table[entry]) * g[f];
                      }
                      for (int d = 0; d < dims; ++d) d_x[d] += dw[d] * dot;
                    });
    }
    offset += enc.output_dim();
  }

  Eigen::Vector3d d_mu;
  for (int d = 0; d < 3; ++d) d_mu[d] = in.inside[d] ? d_x[d] * in.inv_extent[d] : 0.0;
  return d_mu;
}

}  // namespace

int HashGridEncoding::resolution(int level) const {
  return static_cast<int>(std::floor(config.base_resolution *
                                     std::pow(static_cast<double>(config.growth_factor), level)));
}

HashGridEncoding make_hash_grid(const HashGridConfig& config) {
  validate_grid(config);
  HashGridEncoding enc;
  enc.config = config;
  enc.tables.assign(config.levels,
                    std::vector<float>(static_cast<std::size_t>(enc.slots_per_level()) *
                                           config.features_per_level,
                                       0.0f));
  return enc;
}

std::uint32_t hash_slot(std::span<const std::int64_t> index, int table_size_log2) {
  std::uint32_t h = 0;
  for (std::size_t d = 0; d < index.size(); ++d) {
    h ^= static_cast<std::uint32_t>(index[d]) * kHashPrimes[d];
  }
  return h & ((1u << table_size_log2) - 1u);
}

void encode(const HashGridEncoding& enc, std::span<const double> x, std::span<double> out) {
  const int dims = enc.config.dims;
  const int F = enc.config.features_per_level;
  std::array<double, kMaxDims> xc{};
  for (int d = 0; d < dims; ++d) xc[d] = std::isfinite(x[d]) ? std::clamp(x[d], 0.0, 1.0) : 0.0;
  for (int level = 0; level < enc.config.levels; ++level) {
    double* o = &out[level * F];
    for (int f = 0; f < F; ++f) o[f] = 0.0;
    const auto& table = enc.tables[level];
    visit_corners(enc, std::span<const double>(xc.data(), dims), level,
                  [&](std::uint32_t slot, double w, std::span<const double>) {
                    for (int f = 0; f < F; ++f) o[f] += w * table[slot * F + f];
                  });
  }
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

AttenuationField init_field(const FieldConfig& config, const BoundingBox& bbox, std::uint64_t seed) {
  if (bbox.degenerate()) throw Error(ErrorCode::InvalidConfig, "field bbox is degenerate");
  if (config.enc3d.dims != 3 || config.enc4d.dims != 4) {
    throw Error(ErrorCode::InvalidConfig, "field encodings must be 3D and 4D");
  }
  AttenuationField field;
  field.bbox = bbox;
  field.enc3d = make_hash_grid(config.enc3d);
  field.enc4d = make_hash_grid(config.enc4d);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> table_dist(-config.table_init_range, config.table_init_range);
  for (auto* enc : {&field.enc3d, &field.enc4d}) {
    for (auto& table : enc->tables) {
      for (auto& v : table) v = table_dist(rng);
    }
  }

  auto& mlp = field.mlp;
  mlp.widths.push_back(field.feature_dim());
  for (int h : config.hidden) {
    if (h < 1 || h > kMaxWidth) throw Error(ErrorCode::InvalidConfig, "invalid MLP width");
    mlp.widths.push_back(h);
  }
  mlp.widths.push_back(1);
  for (std::size_t l = 0; l + 1 < mlp.widths.size(); ++l) {
    const int n_in = mlp.widths[l];
    const int n_out = mlp.widths[l + 1];
    const float bound = static_cast<float>(std::sqrt(6.0 / n_in));
    std::uniform_real_distribution<float> w_dist(-bound, bound);
    std::vector<float> W(static_cast<std::size_t>(n_in) * n_out);
    for (auto& w : W) w = w_dist(rng);
    mlp.weights.push_back(std::move(W));
    mlp.biases.emplace_back(n_out, 0.0f);
  }
  mlp.biases.back()[0] = static_cast<float>(softplus_inverse(config.initial_rho));
  return field;
}

void check_field(const AttenuationField& field) {
  const auto& mlp = field.mlp;
  if (mlp.widths.size() < 2 || mlp.weights.size() + 1 != mlp.widths.size() ||
      mlp.biases.size() != mlp.weights.size()) {
    throw Error(ErrorCode::InvalidConfig, "MLP layer arrays disagree");
  }
  if (mlp.widths.front() != field.feature_dim() || mlp.widths.back() != 1) {
    throw Error(ErrorCode::InvalidConfig, "MLP input/output widths do not match the encodings");
  }
  for (int l = 0; l < mlp.layers(); ++l) {
    if (mlp.weights[l].size() != static_cast<std::size_t>(mlp.widths[l]) * mlp.widths[l + 1] ||
        mlp.biases[l].size() != static_cast<std::size_t>(mlp.widths[l + 1])) {
      throw Error(ErrorCode::InvalidConfig, "MLP layer " + std::to_string(l) + " has wrong size");
    }
  }
  for (const auto* enc : {&field.enc3d, &field.enc4d}) {
    validate_grid(enc->config);
    if (enc->tables.size() != static_cast<std::size_t>(enc->config.levels)) {
      throw Error(ErrorCode::InvalidConfig, "hash grid level count mismatch");
    }
    for (const auto& t : enc->tables) {
      if (t.size() != static_cast<std::size_t>(enc->slots_per_level()) * enc->config.features_per_level) {
        throw Error(ErrorCode::InvalidConfig, "hash table has wrong size");
      }
    }
  }
}

double checked_time(double t) {
  if (!(t >= -1e-9 && t <= 1.0 + 1e-9)) {
    throw Error(ErrorCode::InvalidTime, "time " + std::to_string(t) + " outside [0, 1]");
  }
  return std::clamp(t, 0.0, 1.0);
}

double attenuation(const AttenuationField& field, const Eigen::Vector3d& mu, double t) {
  const NormalizedInput in = normalize(field, mu, checked_time(t));
  std::vector<double> features;
  encode_into(field, in, features);
  return run_mlp(field.mlp, std::move(features)).rho;
}

FieldGradBuffer FieldGradBuffer::zeros_like(const AttenuationField& field) {
  FieldGradBuffer g;
  for (const auto& t : field.enc3d.tables) g.enc3d.emplace_back(t.size(), 0.0);
  for (const auto& t : field.enc4d.tables) g.enc4d.emplace_back(t.size(), 0.0);
  for (const auto& w : field.mlp.weights) g.weights.emplace_back(w.size(), 0.0);
  for (const auto& b : field.mlp.biases) g.biases.emplace_back(b.size(), 0.0);
  return g;
}

void FieldGradBuffer::zero() {
  for (auto* group : {&enc3d, &enc4d, &weights, &biases}) {
    for (auto& v : *group) std::fill(v.begin(), v.end(), 0.0);
  }
}

void FieldGradBuffer::add(const FieldGradBuffer& other) {
  auto add_group = [](std::vector<std::vector<double>>& dst, const std::vector<std::vector<double>>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
    }
  };
  add_group(enc3d, other.enc3d);
  add_group(enc4d, other.enc4d);
  add_group(weights, other.weights);
  add_group(biases, other.biases);
}

AttenuationGrad attenuation_backward(const AttenuationField& field, const Eigen::Vector3d& mu,
                                     double t, double d_rho) {
  AttenuationGrad out;
  for (const auto& w : field.mlp.weights) out.d_weights.emplace_back(w.size(), 0.0);
  for (const auto& b : field.mlp.biases) out.d_biases.emplace_back(b.size(), 0.0);
  if (d_rho == 0.0) {
    out.rho = attenuation(field, mu, t);
    return out;
  }
  std::vector<TableGradEntry> raw;
  out.d_mu = backward_impl(
      field, mu, t, d_rho, out.d_weights, out.d_biases,
      [&](int e, int level, std::uint32_t entry, double v) { raw.push_back({e, level, entry, v}); },
      &out.rho);
  std::stable_sort(raw.begin(), raw.end(), [](const TableGradEntry& a, const TableGradEntry& b) {
    if (a.encoding != b.encoding) return a.encoding < b.encoding;
    if (a.level != b.level) return a.level < b.level;
    return a.entry < b.entry;
  });
  for (const auto& r : raw) {
    if (!out.tables.empty() && out.tables.back().encoding == r.encoding &&
        out.tables.back().level == r.level && out.tables.back().entry == r.entry) {
      out.tables.back().value += r.value;
    } else {
      out.tables.push_back(r);
    }
  }
  return out;
}

Eigen::Vector3d accumulate_attenuation_backward(const AttenuationField& field,
                                                const Eigen::Vector3d& mu, double t, double d_rho,
                                                FieldGradBuffer& grads) {
  if (d_rho == 0.0) return Eigen::Vector3d::Zero();
  return backward_impl(
      field, mu, t, d_rho, grads.weights, grads.biases,
      [&](int e, int level, std::uint32_t entry, double v) {
        (e == 0 ? grads.enc3d : grads.enc4d)[level][entry] += v;
      },
      nullptr);
}

}  // namespace dsasrgs
