// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
/// @file cli.hpp
/// @brief Subcommand front end: phantom, train, render, eval.
///
/// Exit codes: 0 success or --help, 2 usage or configuration errors, 1 runtime
/// failures. Machine-readable output goes to `out`, diagnostics to `err`.
#pragma once

#include "dsasrgs/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace dsasrgs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
  TrainConfig train;
  std::filesystem::path dataset;
  std::filesystem::path out;
};

/// Merges a JSON run configuration into `cfg`. Unknown keys and wrongly typed
/// values throw InvalidConfig.
void apply_run_config(const std::string& json_text, RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);

/// Full configuration as JSON, accepted back by apply_run_config.
std::string run_config_to_json(const RunConfig& cfg);

/// "off", "bicubic" or "dir=PATH".
void parse_sr_mode(const std::string& text, TrainConfig& cfg);
std::string sr_mode_string(const TrainConfig& cfg);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsasrgs::cli
