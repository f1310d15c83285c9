// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file adam.hpp
/// @brief Adam with named parameter groups.
///
/// A group owns a learning rate; each tensor registered under a group owns
/// its first and second moments. Per-kernel tensors can be remapped after
/// structural scene edits so surviving kernels keep their moments.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dsasrgs {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

void validate(const AdamConfig& cfg);

class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  int add_group(std::string name, double lr);
  /// Registers a tensor of `size` elements under `group`; returns its id.
  int add_tensor(int group, std::size_t size);

  void set_lr(int group, double lr);
  double lr(int group) const;
  const std::string& group_name(int group) const;
  int group_count() const { return static_cast<int>(groups_.size()); }
  std::size_t tensor_size(int tensor) const;

  /// Advances the shared step counter used for bias correction.
  void begin_step() { ++step_; }
  std::int64_t step_count() const { return step_; }

  /// In-place update of params from grads; sizes must equal the tensor size.
  void update(int tensor, std::span<float> params, std::span<const double> grads);

  /// Rebuilds a per-row tensor after a scene edit. remap[i] is the old row of
  /// new row i, or -1 for a fresh row (zero moments). `stride` is elements per row.
  void remap(int tensor, std::span<const std::int64_t> rows, int stride);

  std::span<const double> first_moment(int tensor) const { return tensors_.at(tensor).m; }
  std::span<const double> second_moment(int tensor) const { return tensors_.at(tensor).v; }

 private:
  struct Group {
    std::string name;
    double lr;
  };
  struct Tensor {
    int group;
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamConfig config_;
  std::vector<Group> groups_;
  std::vector<Tensor> tensors_;
  std::int64_t step_ = 0;
};

}  // namespace dsasrgs
