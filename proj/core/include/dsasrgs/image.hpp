// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace dsasrgs {

enum class ImageRole { lr_obs, lr_up, sr, teach, render_hr, render_lr, generic };

/// Single-channel float image, row-major, pixel values in attenuation
/// line-integral units.
struct ProjectionImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  ImageRole role = ImageRole::generic;

  ProjectionImage() = default;
  ProjectionImage(int w, int h, ImageRole r = ImageRole::generic, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill), role(r) {}

  std::size_t size() const { return pixels.size(); }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool same_dims(const ProjectionImage& other) const {
    return width == other.width && height == other.height;
  }
};

/// Throws DimensionMismatch unless both images share dimensions.
void require_same_dims(const ProjectionImage& a, const ProjectionImage& b, const char* what);

/// PFM: "Pf\n{w} {h}\n-1.0\n" then little-endian f32 rows, bottom row first.
void write_pfm(const std::filesystem::path& path, const ProjectionImage& image);
ProjectionImage read_pfm(const std::filesystem::path& path);

}  // namespace dsasrgs
