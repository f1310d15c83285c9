// Copyright Contributors to the dsasrgs project
// SPDX-License-Identifier: Apache-2.0
//
#include "dsasrgs/checkpoint.hpp"

#include "dsasrgs/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dsasrgs {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'S', 'G', 'S'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_floats(std::span<const float> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes.insert(bytes.end(), p, p + values.size_bytes());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    T value;
    take(&value, sizeof(T));
    return value;
  }
  void get_floats(std::span<float> out) { take(out.data(), out.size_bytes()); }
  void take(void* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::FormatError, "checkpoint is truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_encoding(Writer& w, const HashGridEncoding& enc) {
  const auto& c = enc.config;
  w.put<std::uint32_t>(c.dims);
  w.put<std::uint32_t>(c.levels);
  w.put<std::uint32_t>(c.features_per_level);
  w.put<std::uint32_t>(c.table_size_log2);
  w.put<std::uint32_t>(c.base_resolution);
  w.put<float>(c.growth_factor);
  for (const auto& table : enc.tables) w.put_floats(table);
}

HashGridEncoding get_encoding(Reader& r) {
  HashGridConfig c;
  c.dims = static_cast<int>(r.get<std::uint32_t>());
  c.levels = static_cast<int>(r.get<std::uint32_t>());
  c.features_per_level = static_cast<int>(r.get<std::uint32_t>());
  c.table_size_log2 = static_cast<int>(r.get<std::uint32_t>());
  c.base_resolution = static_cast<int>(r.get<std::uint32_t>());
  c.growth_factor = r.get<float>();
  if (c.dims < 1 || c.dims > 4 || c.levels < 1 || c.levels > 64 || c.features_per_level < 1 ||
      c.features_per_level > 64 || c.table_size_log2 < 1 || c.table_size_log2 > 26) {
    throw Error(ErrorCode::FormatError, "checkpoint hash grid header is out of range");
  }
  HashGridEncoding enc;
  try {
    enc = make_hash_grid(c);
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint hash grid header: ") + e.what());
  }
  for (auto& table : enc.tables) r.get_floats(table);
  return enc;
}

json box_json(const BoundingBox& b) {
  return {{"lo", {b.lo.x(), b.lo.y(), b.lo.z()}}, {"hi", {b.hi.x(), b.hi.y(), b.hi.z()}}};
}

BoundingBox box_from_json(const json& j) {
  BoundingBox b;
  for (int d = 0; d < 3; ++d) {
    b.lo[d] = j.at("lo").at(d).get<double>();
    b.hi[d] = j.at("hi").at(d).get<double>();
  }
  return b;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Scene& scene, const AttenuationField& field,
                                               const std::string& metadata_json) {
  check_scene(scene);
  check_field(field);
  Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(scene.size());
  for (const auto& k : scene.kernels) {
    w.put_floats(k.mu);
    w.put_floats(k.log_scale);
    w.put_floats(k.rot);
  }
  put_encoding(w, field.enc3d);
  put_encoding(w, field.enc4d);
  const auto& mlp = field.mlp;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mlp.widths.size()));
  for (int width : mlp.widths) w.put<std::uint32_t>(width);
  for (int l = 0; l < mlp.layers(); ++l) {
    w.put_floats(mlp.weights[l]);
    w.put_floats(mlp.biases[l]);
  }

  json trailer;
  try {
    trailer["metadata"] = json::parse(metadata_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  trailer["scene_bbox"] = box_json(scene.bbox);
  trailer["field_bbox"] = box_json(field.bbox);
  const std::string text = trailer.dump();
  w.put<std::uint64_t>(text.size());
  w.put_raw(text.data(), text.size());
  return std::move(w.bytes);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::FormatError, "bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::FormatError, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  if (count > bytes.size() / 40) throw Error(ErrorCode::FormatError, "checkpoint kernel count too large");

  Checkpoint ck;
  ck.scene.kernels.resize(count);
  for (auto& k : ck.scene.kernels) {
    r.get_floats(k.mu);
    r.get_floats(k.log_scale);
    r.get_floats(k.rot);
  }
  ck.scene.stats.assign(count, KernelStats{});

  ck.field.enc3d = get_encoding(r);
  ck.field.enc4d = get_encoding(r);
  auto& mlp = ck.field.mlp;
  const auto n_widths = r.get<std::uint32_t>();
  if (n_widths < 2 || n_widths > 64) throw Error(ErrorCode::FormatError, "checkpoint MLP depth out of range");
  for (std::uint32_t i = 0; i < n_widths; ++i) {
    const auto width = r.get<std::uint32_t>();
    if (width < 1 || width > 4096) throw Error(ErrorCode::FormatError, "checkpoint MLP width out of range");
    mlp.widths.push_back(static_cast<int>(width));
  }
  for (std::size_t l = 0; l + 1 < mlp.widths.size(); ++l) {
    std::vector<float> W(static_cast<std::size_t>(mlp.widths[l]) * mlp.widths[l + 1]);
    std::vector<float> b(mlp.widths[l + 1]);
    r.get_floats(W);
    r.get_floats(b);
    mlp.weights.push_back(std::move(W));
    mlp.biases.push_back(std::move(b));
  }

  const auto trailer_len = r.get<std::uint64_t>();
  if (trailer_len > bytes.size()) throw Error(ErrorCode::FormatError, "checkpoint trailer too long");
  std::string text(trailer_len, '\0');
  r.take(text.data(), text.size());
  if (!r.done()) throw Error(ErrorCode::FormatError, "trailing bytes after checkpoint trailer");
  try {
    const json trailer = json::parse(text);
    ck.metadata = trailer.at("metadata").dump();
    ck.scene.bbox = box_from_json(trailer.at("scene_bbox"));
    ck.field.bbox = box_from_json(trailer.at("field_bbox"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint trailer: ") + e.what());
  }
  try {
    check_field(ck.field);
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint field: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Scene& scene,
                     const AttenuationField& field, const std::string& metadata_json) {
  const auto bytes = serialize_checkpoint(scene, field, metadata_json);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace dsasrgs
