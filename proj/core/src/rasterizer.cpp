// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/rasterizer.hpp"

#include "dsasrgs/errors.hpp"
#include "dsasrgs/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

namespace dsasrgs {

namespace {

void run_parallel(ThreadPool* pool, std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (pool) {
    pool->parallel_for(count, fn);
  } else {
    for (std::size_t i = 0; i < count; ++i) fn(i);
  }
}

ProjectedKernel project_kernel(const GaussianKernel& k, const CameraView& view, double cutoff,
                               int width, int height, int tile_size) {
  ProjectedKernel pk;
  const Eigen::Vector3d mu = k.mean();
  pk.p_cam = view.R * mu + view.t;
  pk.depth = pk.p_cam.z();
  if (!(pk.depth > kDepthEps)) return pk;

  const Eigen::Vector3d h = view.K * pk.p_cam;
  pk.u = h.x() / h.z();
  pk.v = h.y() / h.z();
  pk.sigma3d = covariance(k);
  pk.J = projection_jacobian(view.K, pk.p_cam);
  const Eigen::Matrix<double, 2, 3> T = pk.J * view.R;
  pk.cov2d = T * pk.sigma3d * T.transpose();
  const double off = 0.5 * (pk.cov2d(0, 1) + pk.cov2d(1, 0));
  pk.cov2d(0, 1) = off;
  pk.cov2d(1, 0) = off;
  pk.cov2d(0, 0) += kCov2dFloor;
  pk.cov2d(1, 1) += kCov2dFloor;

  const double det = pk.cov2d.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) return pk;
  pk.conic_a = pk.cov2d(1, 1) / det;
  pk.conic_b = -pk.cov2d(0, 1) / det;
  pk.conic_c = pk.cov2d(0, 0) / det;

  const int tiles_x = (width + tile_size - 1) / tile_size;
  const int tiles_y = (height + tile_size - 1) / tile_size;
  if (std::isinf(cutoff)) {
    pk.tile_x0 = 0;
    pk.tile_x1 = tiles_x - 1;
    pk.tile_y0 = 0;
    pk.tile_y1 = tiles_y - 1;
  } else {
    // Square support of half-width ceil(cutoff * sqrt(lambda_max)), a superset
    // of the cutoff ellipse. Pixel centers sit at i + 0.5.
    const double mid = 0.5 * (pk.cov2d(0, 0) + pk.cov2d(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));
    const double rx = std::ceil(cutoff * std::sqrt(lambda_max));
    const double ry = rx;
    const double x0 = std::ceil(pk.u - rx - 0.5);
    const double x1 = std::floor(pk.u + rx - 0.5);
    const double y0 = std::ceil(pk.v - ry - 0.5);
    const double y1 = std::floor(pk.v + ry - 0.5);
    if (x1 < 0.0 || y1 < 0.0 || x0 > width - 1 || y0 > height - 1 || x0 > x1 || y0 > y1) {
      pk.visible = true;
      return pk;
    }
    const int px0 = static_cast<int>(std::max(x0, 0.0));
    const int px1 = static_cast<int>(std::min(x1, static_cast<double>(width - 1)));
    const int py0 = static_cast<int>(std::max(y0, 0.0));
    const int py1 = static_cast<int>(std::min(y1, static_cast<double>(height - 1)));
    pk.tile_x0 = px0 / tile_size;
    pk.tile_x1 = px1 / tile_size;
    pk.tile_y0 = py0 / tile_size;
    pk.tile_y1 = py1 / tile_size;
  }
  pk.visible = true;
  return pk;
}

RenderState prepare(const Scene& scene, std::span<const float> rho, const CameraView& view,
                    double t, int width, int height, const RenderSettings& settings) {
  checked_time(t);
  if (rho.size() != scene.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one attenuation per kernel required");
  }
  if (settings.tile_size < 1) throw Error(ErrorCode::InvalidConfig, "tile size must be positive");
  if (!(settings.cutoff_sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "cutoff_sigma must be > 0");

  RenderState st;
  st.view = view_at_resolution(view, width, height);
  st.t = t;
  st.width = width;
  st.height = height;
  st.tile_size = settings.tile_size;
  st.tiles_x = (width + settings.tile_size - 1) / settings.tile_size;
  st.tiles_y = (height + settings.tile_size - 1) / settings.tile_size;
  st.rho.assign(rho.begin(), rho.end());
  st.projected.resize(scene.size());

  run_parallel(settings.pool, scene.size(), [&](std::size_t i) {
    st.projected[i] = project_kernel(scene.kernels[i], st.view, settings.cutoff_sigma, width,
                                     height, settings.tile_size);
  });

  const std::size_t n_tiles = static_cast<std::size_t>(st.tiles_x) * st.tiles_y;
  std::vector<std::uint32_t> counts(n_tiles + 1, 0);
  for (const auto& pk : st.projected) {
    if (!pk.visible) continue;
    for (int ty = pk.tile_y0; ty <= pk.tile_y1; ++ty) {
      for (int tx = pk.tile_x0; tx <= pk.tile_x1; ++tx) ++counts[ty * st.tiles_x + tx + 1];
    }
  }
  for (std::size_t k = 1; k <= n_tiles; ++k) counts[k] += counts[k - 1];
  st.bin_offsets = counts;
  st.bin_items.resize(counts[n_tiles]);
  std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
  for (std::uint32_t i = 0; i < st.projected.size(); ++i) {
    const auto& pk = st.projected[i];
    if (!pk.visible) continue;
    for (int ty = pk.tile_y0; ty <= pk.tile_y1; ++ty) {
      for (int tx = pk.tile_x0; tx <= pk.tile_x1; ++tx) {
        st.bin_items[cursor[ty * st.tiles_x + tx]++] = i;
      }
    }
  }
  return st;
}

ProjectionImage rasterize(const RenderState& st, ThreadPool* pool) {
  ProjectionImage image(st.width, st.height, ImageRole::render_hr);
  const int ts = st.tile_size;
  const std::size_t n_tiles = static_cast<std::size_t>(st.tiles_x) * st.tiles_y;
  run_parallel(pool, n_tiles, [&](std::size_t tile) {
    const int tx = static_cast<int>(tile % st.tiles_x);
    const int ty = static_cast<int>(tile / st.tiles_x);
    const int x0 = tx * ts;
    const int y0 = ty * ts;
    const int x1 = std::min(x0 + ts, st.width);
    const int y1 = std::min(y0 + ts, st.height);
    const int tw = x1 - x0;
    std::vector<float> acc(static_cast<std::size_t>(tw) * (y1 - y0), 0.0f);
    for (std::uint32_t b = st.bin_offsets[tile]; b < st.bin_offsets[tile + 1]; ++b) {
      const std::uint32_t i = st.bin_items[b];
      const auto& pk = st.projected[i];
      const float rho = st.rho[i];
      const float a = static_cast<float>(pk.conic_a);
      const float bb = static_cast<float>(pk.conic_b);
      const float c = static_cast<float>(pk.conic_c);
      const float mu_x = static_cast<float>(pk.u);
      const float mu_y = static_cast<float>(pk.v);
      for (int y = y0; y < y1; ++y) {
        const float dy = (static_cast<float>(y) + 0.5f) - mu_y;
        float* row = &acc[static_cast<std::size_t>(y - y0) * tw];
        for (int x = x0; x < x1; ++x) {
          const float dx = (static_cast<float>(x) + 0.5f) - mu_x;
          const float power = -0.5f * (a * dx * dx + c * dy * dy) - bb * dx * dy;
          row[x - x0] += rho * std::exp(power);
        }
      }
    }
    for (int y = y0; y < y1; ++y) {
      std::copy_n(&acc[static_cast<std::size_t>(y - y0) * tw], tw, &image.at(x0, y));
    }
  });
  return image;
}

/// dR/dq_k for k over (w, x, y, z), evaluated at a unit quaternion.
std::array<Eigen::Matrix3d, 4> rotation_derivatives(double w, double x, double y, double z) {
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
  d[1] << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
  d[2] << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
  d[3] << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

}  // namespace

std::vector<float> evaluate_attenuations(const Scene& scene, const AttenuationField& field,
                                         double t, ThreadPool* pool) {
  checked_time(t);
  std::vector<float> rho(scene.size());
  run_parallel(pool, scene.size(), [&](std::size_t i) {
    rho[i] = static_cast<float>(attenuation(field, scene.kernels[i].mean(), t));
  });
  return rho;
}

RenderResult render_with_rho(const Scene& scene, std::span<const float> rho, const CameraView& view,
                             double t, int width, int height, const RenderSettings& settings) {
  RenderResult out;
  out.state = prepare(scene, rho, view, t, width, height, settings);
  out.image = rasterize(out.state, settings.pool);
  out.rho.assign(rho.begin(), rho.end());
  return out;
}

RenderResult render(const Scene& scene, const AttenuationField& field, const CameraView& view,
                    double t, int width, int height, const RenderSettings& settings) {
  checked_time(t);
  const std::vector<float> rho = evaluate_attenuations(scene, field, t, settings.pool);
  return render_with_rho(scene, rho, view, t, width, height, settings);
}

KernelGrads render_backward(const Scene& scene, const AttenuationField& field,
                            const RenderState& st, std::span<const double> d_image, int width,
                            int height, const RenderSettings& settings) {
  if (width != st.width || height != st.height ||
      d_image.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::DimensionMismatch, "d_image does not match the rendered image");
  }
  if (st.projected.size() != scene.size()) {
    throw Error(ErrorCode::DimensionMismatch, "render state was built for a different scene");
  }
  const std::size_t n = scene.size();
  KernelGrads g;
  g.d_mu.assign(n, {0.0, 0.0, 0.0});
  g.d_log_scale.assign(n, {0.0, 0.0, 0.0});
  g.d_rot.assign(n, {0.0, 0.0, 0.0, 0.0});
  g.d_rho.assign(n, 0.0);
  g.uv_grad_norm.assign(n, 0.0);
  g.contributed.assign(n, 0);
  g.field = FieldGradBuffer::zeros_like(field);

  // Per (tile, bin slot) partials: d_rho, d_u, d_v, d_a, d_b, d_c.
  constexpr int kParts = 6;
  std::vector<double> partial(st.bin_items.size() * kParts, 0.0);
  const int ts = st.tile_size;
  const std::size_t n_tiles = static_cast<std::size_t>(st.tiles_x) * st.tiles_y;
  run_parallel(settings.pool, n_tiles, [&](std::size_t tile) {
    const int tx = static_cast<int>(tile % st.tiles_x);
    const int ty = static_cast<int>(tile / st.tiles_x);
    const int x0 = tx * ts;
    const int y0 = ty * ts;
    const int x1 = std::min(x0 + ts, st.width);
    const int y1 = std::min(y0 + ts, st.height);
    for (std::uint32_t b = st.bin_offsets[tile]; b < st.bin_offsets[tile + 1]; ++b) {
      const std::uint32_t i = st.bin_items[b];
      const auto& pk = st.projected[i];
      const double rho = st.rho[i];
      double g_rho = 0.0, g_u = 0.0, g_v = 0.0, g_a = 0.0, g_b = 0.0, g_c = 0.0;
      for (int y = y0; y < y1; ++y) {
        const double dy = (y + 0.5) - pk.v;
        const double* grow = &d_image[static_cast<std::size_t>(y) * st.width];
        for (int x = x0; x < x1; ++x) {
          const double gp = grow[x];
          if (gp == 0.0) continue;
          const double dx = (x + 0.5) - pk.u;
          const double w = std::exp(-0.5 * (pk.conic_a * dx * dx + pk.conic_c * dy * dy) -
                                    pk.conic_b * dx * dy);
          g_rho += gp * w;
          const double G = gp * rho * w;
          g_u += G * (pk.conic_a * dx + pk.conic_b * dy);
          g_v += G * (pk.conic_b * dx + pk.conic_c * dy);
          g_a += -0.5 * G * dx * dx;
          g_b += -G * dx * dy;
          g_c += -0.5 * G * dy * dy;
        }
      }
      double* out = &partial[static_cast<std::size_t>(b) * kParts];
      out[0] = g_rho;
      out[1] = g_u;
      out[2] = g_v;
      out[3] = g_a;
      out[4] = g_b;
      out[5] = g_c;
    }
  });

  std::vector<std::array<double, 5>> geo(n, {0.0, 0.0, 0.0, 0.0, 0.0});
  for (std::size_t tile = 0; tile < n_tiles; ++tile) {
    for (std::uint32_t b = st.bin_offsets[tile]; b < st.bin_offsets[tile + 1]; ++b) {
      const std::uint32_t i = st.bin_items[b];
      const double* p = &partial[static_cast<std::size_t>(b) * kParts];
      g.d_rho[i] += p[0];
      for (int k = 0; k < 5; ++k) geo[i][k] += p[k + 1];
      g.contributed[i] = 1;
    }
  }

  const Eigen::Matrix3d& W = st.view.R;
  const Eigen::Matrix3d& K = st.view.K;
  run_parallel(settings.pool, n, [&](std::size_t i) {
    if (!g.contributed[i]) return;
    const auto& pk = st.projected[i];
    const auto& kern = scene.kernels[i];
    const auto& gi = geo[i];
    // Normalized image coordinates (u / width, v / height) keep the threshold resolution-free.
    g.uv_grad_norm[i] = std::hypot(gi[0] * width, gi[1] * height);

    Eigen::Matrix2d A;
    A << pk.conic_a, pk.conic_b, pk.conic_b, pk.conic_c;
    Eigen::Matrix2d Gc;
    Gc << gi[2], 0.5 * gi[3], 0.5 * gi[3], gi[4];
    const Eigen::Matrix2d d_cov2d = -A * Gc * A;

    const Eigen::Matrix<double, 2, 3> T = pk.J * W;
    const Eigen::Matrix3d d_sigma = T.transpose() * d_cov2d * T;
    const Eigen::Matrix<double, 2, 3> d_T = 2.0 * d_cov2d * T * pk.sigma3d;
    const Eigen::Matrix<double, 2, 3> d_J = d_T * W.transpose();

    const double x = pk.p_cam.x(), y = pk.p_cam.y(), z = pk.p_cam.z();
    const double iz2 = 1.0 / (z * z);
    Eigen::Vector3d d_pcam = pk.J.transpose() * Eigen::Vector2d(gi[0], gi[1]);
    for (int a = 0; a < 2; ++a) {
      const double n_a = K(a, 0) * x + K(a, 1) * y;
      d_pcam.x() += d_J(a, 2) * (-K(a, 0) * iz2);
      d_pcam.y() += d_J(a, 2) * (-K(a, 1) * iz2);
      d_pcam.z() += d_J(a, 0) * (-K(a, 0) * iz2) + d_J(a, 1) * (-K(a, 1) * iz2) +
                    d_J(a, 2) * (2.0 * n_a * iz2 / z);
    }
    const Eigen::Vector3d d_mu = W.transpose() * d_pcam;
    for (int d = 0; d < 3; ++d) g.d_mu[i][d] = d_mu[d];

    // Sigma = M M^T with M = R(q) diag(s).
    const auto& q = kern.rot;
    double qn = std::sqrt(static_cast<double>(q[0]) * q[0] + static_cast<double>(q[1]) * q[1] +
                          static_cast<double>(q[2]) * q[2] + static_cast<double>(q[3]) * q[3]);
    if (!(qn > 0.0)) qn = 1.0;
    const double qw = q[0] / qn, qx = q[1] / qn, qy = q[2] / qn, qz = q[3] / qn;
    const Eigen::Matrix3d Rq = rotation_from_quaternion(kern.rot);
    Eigen::Vector3d s;
    for (int c = 0; c < 3; ++c) s[c] = std::exp(static_cast<double>(kern.log_scale[c]));
    Eigen::Matrix3d M = Rq;
    for (int c = 0; c < 3; ++c) M.col(c) *= s[c];
    const Eigen::Matrix3d d_M = 2.0 * d_sigma * M;
    Eigen::Matrix3d d_R;
    for (int c = 0; c < 3; ++c) {
      g.d_log_scale[i][c] = d_M.col(c).dot(Rq.col(c)) * s[c];
      d_R.col(c) = d_M.col(c) * s[c];
    }
    const auto dRdq = rotation_derivatives(qw, qx, qy, qz);
    const Eigen::Vector4d qhat(qw, qx, qy, qz);
    Eigen::Vector4d d_qhat;
    for (int k = 0; k < 4; ++k) d_qhat[k] = (d_R.array() * dRdq[k].array()).sum();
    const Eigen::Vector4d d_q = (d_qhat - qhat * qhat.dot(d_qhat)) / qn;
    for (int k = 0; k < 4; ++k) g.d_rot[i][k] = d_q[k];
  });

  // Field chain runs serially in kernel order so the dense buffer sums are
  // reproducible.
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.contributed[i] || g.d_rho[i] == 0.0) continue;
    const Eigen::Vector3d d_mu_field =
        accumulate_attenuation_backward(field, scene.kernels[i].mean(), st.t, g.d_rho[i], g.field);
    for (int d = 0; d < 3; ++d) g.d_mu[i][d] += d_mu_field[d];
  }
  return g;
}

KernelGrads render_backward(const Scene& scene, const AttenuationField& field,
                            const CameraView& view, double t, std::span<const double> d_image,
                            int width, int height, const RenderSettings& settings) {
  const std::vector<float> rho = evaluate_attenuations(scene, field, t, settings.pool);
  const RenderState st = prepare(scene, rho, view, t, width, height, settings);
  return render_backward(scene, field, st, d_image, width, height, settings);
}

int dominant_kernel(const RenderState& st, int x, int y) {
  if (x < 0 || y < 0 || x >= st.width || y >= st.height) return -1;
  const std::size_t tile = static_cast<std::size_t>(y / st.tile_size) * st.tiles_x + x / st.tile_size;
  int best = -1;
  double best_value = -1.0;
  for (std::uint32_t b = st.bin_offsets[tile]; b < st.bin_offsets[tile + 1]; ++b) {
    const std::uint32_t i = st.bin_items[b];
    const auto& pk = st.projected[i];
    const double dx = (x + 0.5) - pk.u;
    const double dy = (y + 0.5) - pk.v;
    const double value = st.rho[i] * std::exp(-0.5 * (pk.conic_a * dx * dx + pk.conic_c * dy * dy) -
                                              pk.conic_b * dx * dy);
    if (value > best_value) {
      best_value = value;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void accumulate_subpixel_grads(Scene& scene, const KernelGrads& grads) {
  if (grads.uv_grad_norm.size() != scene.size() || grads.contributed.size() != scene.size()) {
    throw Error(ErrorCode::DimensionMismatch, "gradient list does not match the scene");
  }
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!grads.contributed[i]) continue;
    scene.stats[i].grad_norm_sum += grads.uv_grad_norm[i];
    scene.stats[i].grad_count += 1;
  }
}

void accumulate_attenuation(Scene& scene, std::span<const float> rho) {
  if (rho.size() != scene.size()) {
    throw Error(ErrorCode::DimensionMismatch, "attenuation list does not match the scene");
  }
  for (std::size_t i = 0; i < scene.size(); ++i) {
    scene.stats[i].atten_sum += std::max(0.0f, rho[i]);
    scene.stats[i].atten_count += 1;
  }
}

}  // namespace dsasrgs
