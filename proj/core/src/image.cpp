// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/image.hpp"

#include "dsasrgs/errors.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace dsasrgs {

static_assert(std::endian::native == std::endian::little, "PFM I/O assumes a little-endian host");

void require_same_dims(const ProjectionImage& a, const ProjectionImage& b, const char* what) {
  if (!a.same_dims(b)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                    " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

void write_pfm(const std::filesystem::path& path, const ProjectionImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "Pf\n" << image.width << ' ' << image.height << "\n-1.0\n";
  for (int y = image.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(&image.pixels[static_cast<std::size_t>(y) * image.width]),
              static_cast<std::streamsize>(sizeof(float) * image.width));
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

namespace {

std::string read_token(std::istream& in) {
  std::string token;
  char c = 0;
  while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
  }
  if (!in) return token;
  token += c;
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) token += c;
  return token;
}

}  // namespace

ProjectionImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  const std::string magic = read_token(in);
  if (magic != "Pf") throw Error(ErrorCode::FormatError, path.string() + ": not a grayscale PFM");
  int width = 0;
  int height = 0;
  double scale = 0.0;
  try {
    width = std::stoi(read_token(in));
    height = std::stoi(read_token(in));
    scale = std::stod(read_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::FormatError, path.string() + ": malformed PFM header");
  }
  if (width < 1 || height < 1) throw Error(ErrorCode::FormatError, path.string() + ": bad dims");
  if (scale >= 0.0) {
    throw Error(ErrorCode::FormatError, path.string() + ": big-endian PFM not supported");
  }
  // read_token consumed exactly one whitespace byte after the scale.
  ProjectionImage image(width, height);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(&image.pixels[static_cast<std::size_t>(y) * width]),
            static_cast<std::streamsize>(sizeof(float) * width));
  }
  if (!in) throw Error(ErrorCode::FormatError, path.string() + ": truncated pixel data");
  return image;
}

}  // namespace dsasrgs
