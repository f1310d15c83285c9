// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/adam.hpp"

#include "dsasrgs/errors.hpp"

#include <cmath>

namespace dsasrgs {

void validate(const AdamConfig& cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
      !(cfg.eps > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in [0, 1) and eps must be positive");
  }
}

Adam::Adam(AdamConfig config) : config_(config) { validate(config_); }

int Adam::add_group(std::string name, double lr) {
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be non-negative");
  groups_.push_back({std::move(name), lr});
  return static_cast<int>(groups_.size()) - 1;
}

int Adam::add_tensor(int group, std::size_t size) {
  if (group < 0 || group >= group_count()) throw Error(ErrorCode::InvalidConfig, "unknown Adam group");
  tensors_.push_back({group, std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)});
  return static_cast<int>(tensors_.size()) - 1;
}

void Adam::set_lr(int group, double lr) {
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be non-negative");
  groups_.at(group).lr = lr;
}

double Adam::lr(int group) const { return groups_.at(group).lr; }

const std::string& Adam::group_name(int group) const { return groups_.at(group).name; }

std::size_t Adam::tensor_size(int tensor) const { return tensors_.at(tensor).m.size(); }

void Adam::update(int tensor, std::span<float> params, std::span<const double> grads) {
  Tensor& ts = tensors_.at(tensor);
  if (params.size() != ts.m.size() || grads.size() != ts.m.size()) {
    throw Error(ErrorCode::DimensionMismatch, "Adam tensor size does not match its parameters");
  }
  const double step = static_cast<double>(step_ > 0 ? step_ : 1);
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  const double lr = groups_[ts.group].lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    ts.m[i] = b1 * ts.m[i] + (1.0 - b1) * g;
    ts.v[i] = b2 * ts.v[i] + (1.0 - b2) * g * g;
    const double m_hat = ts.m[i] / c1;
    const double v_hat = ts.v[i] / c2;
    params[i] = static_cast<float>(params[i] - lr * m_hat / (std::sqrt(v_hat) + config_.eps));
  }
}

void Adam::remap(int tensor, std::span<const std::int64_t> rows, int stride) {
  Tensor& ts = tensors_.at(tensor);
  const std::size_t old_rows = ts.m.size() / static_cast<std::size_t>(stride);
  std::vector<double> m(rows.size() * stride, 0.0);
  std::vector<double> v(rows.size() * stride, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0) continue;
    const auto src = static_cast<std::size_t>(rows[r]);
    if (src >= old_rows) throw Error(ErrorCode::DimensionMismatch, "remap row out of range");
    for (int k = 0; k < stride; ++k) {
      m[r * stride + k] = ts.m[src * stride + k];
      v[r * stride + k] = ts.v[src * stride + k];
    }
  }
  ts.m = std::move(m);
  ts.v = std::move(v);
}

}  // namespace dsasrgs
