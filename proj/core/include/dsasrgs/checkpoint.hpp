// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file checkpoint.hpp
/// @brief Binary checkpoint of a scene and its attenuation field.
///
/// Layout (little-endian):
///   "DSGS" | u32 version=1 | u64 kernel count
///   per kernel: f32 mu[3], f32 log_scale[3], f32 rot[4]
///   field: per encoding u32 dims, levels, F, table_size_log2, base_res,
///          f32 growth, then raw f32 tables level by level;
///          u32 layer count, u32 widths, then per layer f32 weights (row-major)
///          followed by f32 biases
///   u64 trailer length | JSON trailer (metadata, scene and field boxes)
///
/// Kernel stats are not persisted.
#pragma once

#include "dsasrgs/dnaf.hpp"
#include "dsasrgs/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dsasrgs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Scene scene;
  AttenuationField field;
  /// JSON object with training metadata; the boxes are stored alongside it.
  std::string metadata = "{}";
};

std::vector<std::uint8_t> serialize_checkpoint(const Scene& scene, const AttenuationField& field,
                                               const std::string& metadata_json = "{}");

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Scene& scene,
                     const AttenuationField& field, const std::string& metadata_json = "{}");

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsasrgs
