#pragma once

// Voxel volumes and their on-disk form: a directory holding meta.json
// ({"dims": [D, H, W], "dtype": "u8" | "f32", "spacing": [...]}) and
// data.raw (little-endian, width fastest, then height, then depth).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace neurogir {

using Dims = std::array<std::size_t, 3>;  // (D, H, W)

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { u8, f32 };

inline std::string to_string(DType t) { return t == DType::u8 ? "u8" : "f32"; }

inline DType parse_dtype(const std::string& s) {
  if (s == "u8") return DType::u8;
  if (s == "f32") return DType::f32;
  throw FormatError("unknown dtype '" + s + "'");
}

inline std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

struct Volume {
  Dims dims{0, 0, 0};
  std::variant<std::vector<std::uint8_t>, std::vector<float>> voxels;
  nlohmann::json meta = nlohmann::json::object();

  static Volume zeros_f32(Dims d) { return {d, std::vector<float>(voxel_count(d), 0.0f), nlohmann::json::object()}; }
  static Volume zeros_u8(Dims d) {
    return {d, std::vector<std::uint8_t>(voxel_count(d), 0), nlohmann::json::object()};
  }

  DType dtype() const { return std::holds_alternative<std::vector<float>>(voxels) ? DType::f32 : DType::u8; }
  std::size_t size() const { return voxel_count(dims); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * dims[1] + y) * dims[2] + x; }

  std::vector<float>& f32() { return std::get<std::vector<float>>(voxels); }
  const std::vector<float>& f32() const { return std::get<std::vector<float>>(voxels); }
  std::vector<std::uint8_t>& u8() { return std::get<std::vector<std::uint8_t>>(voxels); }
  const std::vector<std::uint8_t>& u8() const { return std::get<std::vector<std::uint8_t>>(voxels); }

  float value(std::size_t i) const {
    return dtype() == DType::f32 ? f32()[i] : float(u8()[i]);
  }

  /// Values as floats (u8 taken verbatim, no scaling).
  std::vector<float> as_float() const {
    if (dtype() == DType::f32) return f32();
    return {u8().begin(), u8().end()};
  }
};

/// Image intensities in [0, 1]: u8 divided by 255; f32 kept when already in
/// range, otherwise min-max rescaled per volume.
inline Volume normalize_image(const Volume& v) {
  Volume out = Volume::zeros_f32(v.dims);
  out.meta = v.meta;
  auto& dst = out.f32();
  if (v.dtype() == DType::u8) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = float(v.u8()[i]) / 255.0f;
    return out;
  }
  dst = v.f32();
  if (dst.empty()) return out;
  const auto [lo, hi] = std::minmax_element(dst.begin(), dst.end());
  const float mn = *lo, mx = *hi;
  if (mn >= 0.0f && mx <= 1.0f) return out;
  const float range = mx > mn ? mx - mn : 1.0f;
  for (auto& x : dst) x = (x - mn) / range;
  return out;
}

/// Labels as {0, 1} bytes; any nonzero voxel is foreground.
inline Volume binarize_label(const Volume& v) {
  Volume out = Volume::zeros_u8(v.dims);
  out.meta = v.meta;
  for (std::size_t i = 0; i < out.size(); ++i) out.u8()[i] = v.value(i) != 0.0f ? 1 : 0;
  return out;
}

namespace detail {

template <typename W>
void write_le(std::ostream& os, const std::vector<W>& values) {
  if constexpr (std::endian::native == std::endian::little || sizeof(W) == 1) {
    os.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(W)));
  } else {
    for (W v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(W)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      os.write(bytes.data(), sizeof(W));
    }
  }
}

template <typename W>
void read_le(const std::string& blob, std::vector<W>& values) {
  values.resize(blob.size() / sizeof(W));
  std::memcpy(values.data(), blob.data(), values.size() * sizeof(W));
  if constexpr (std::endian::native != std::endian::little && sizeof(W) > 1) {
    for (auto& v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(W)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<W>(bytes);
    }
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void save_volume(const Volume& v, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = v.meta.is_object() ? v.meta : nlohmann::json::object();
  meta["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  meta["dtype"] = to_string(v.dtype());
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw FormatError("cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream raw(dir / "data.raw", std::ios::binary);
  if (!raw) throw FormatError("cannot write " + (dir / "data.raw").string());
  std::visit([&](const auto& values) { detail::write_le(raw, values); }, v.voxels);
}

inline Volume load_volume(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json")) throw FormatError("missing header " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt header " + (dir / "meta.json").string() + ": " + e.what());
  }
  if (!meta.is_object() || !meta.contains("dims") || !meta.contains("dtype")) {
    throw FormatError("header " + (dir / "meta.json").string() + " needs 'dims' and 'dtype'");
  }
  Volume v;
  try {
    const auto dims = meta.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError("header dims must list [D, H, W]");
    v.dims = {dims[0], dims[1], dims[2]};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dims in header: ") + e.what());
  }
  const DType dtype = parse_dtype(meta.at("dtype").get<std::string>());
  const std::string blob = detail::read_file(dir / "data.raw");
  const std::size_t expected = v.size() * (dtype == DType::u8 ? 1 : 4);
  if (blob.size() != expected) {
    throw FormatError("size mismatch: header " + meta.at("dims").dump() + " " + to_string(dtype) + " needs " +
                      std::to_string(expected) + " bytes, data.raw has " + std::to_string(blob.size()));
  }
  if (dtype == DType::u8) {
    std::vector<std::uint8_t> values;
    detail::read_le(blob, values);
    v.voxels = std::move(values);
  } else {
    std::vector<float> values;
    detail::read_le(blob, values);
    v.voxels = std::move(values);
  }
  meta.erase("dims");
  meta.erase("dtype");
  v.meta = std::move(meta);
  return v;
}

/// Image (f32 in [0, 1]) paired with its binary label.
struct Sample {
  Volume image;
  Volume label;
};

inline void check_sample(const Sample& s) {
  if (s.image.dims != s.label.dims) throw std::invalid_argument("sample image and label dims differ");
}

/// Sample directory layout: <dir>/image and <dir>/label volume directories.
inline void save_sample(const Sample& s, const std::filesystem::path& dir) {
  save_volume(s.image, dir / "image");
  save_volume(s.label, dir / "label");
}

inline Sample load_sample(const std::filesystem::path& dir) {
  Sample s{normalize_image(load_volume(dir / "image")), binarize_label(load_volume(dir / "label"))};
  check_sample(s);
  return s;
}

/// Every sample directory directly below `dir`, in lexicographic order.
inline std::vector<std::filesystem::path> list_samples(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "image" / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace neurogir
