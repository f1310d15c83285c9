// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsasrgs {

enum class ErrorCode {
  BehindCamera,
  NonPSD,
  InvalidConfig,
  InvalidTime,
  NoSamples,
  CapExceeded,
  DimensionMismatch,
  MissingPseudoLabel,
  NonFiniteLoss,
  FormatError,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NonPSD: return "NonPSD";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidTime: return "InvalidTime";
    case ErrorCode::NoSamples: return "NoSamples";
    case ErrorCode::CapExceeded: return "CapExceeded";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingPseudoLabel: return "MissingPseudoLabel";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dsasrgs
