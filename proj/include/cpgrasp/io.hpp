#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cpgrasp/errors.hpp"
#include "cpgrasp/tsdf.hpp"

namespace cpgrasp {

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw IoError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return is;
}

}  // namespace detail

// TSDF1 layout, all little-endian:
//   magic "TSDF1\0\0\0" (8 bytes), u32 version = 1, u32 reserved = 0
//   f64 origin[3], f64 voxel_size, u32 dims[3], f64 truncation
//   f32 values[n], f32 weights[n]   (x-fastest, n = dims product)
// Values and weights are stored in single precision.
inline constexpr std::array<char, 8> kTsdfMagic = {'T', 'S', 'D', 'F', '1', 0, 0, 0};
inline constexpr std::uint32_t kTsdfVersion = 1;

inline void write_tsdf(std::ostream& os, const TsdfVolume& vol) {
  os.write(kTsdfMagic.data(), kTsdfMagic.size());
  detail::put_le<std::uint32_t>(os, kTsdfVersion);
  detail::put_le<std::uint32_t>(os, 0);
  for (int a = 0; a < 3; ++a) detail::put_le<double>(os, vol.origin()[a]);
  detail::put_le<double>(os, vol.voxel_size());
  for (int a = 0; a < 3; ++a) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(vol.dims()[a]));
  }
  detail::put_le<double>(os, vol.truncation());
  for (double v : vol.values()) detail::put_le<float>(os, static_cast<float>(v));
  for (double w : vol.weights()) detail::put_le<float>(os, static_cast<float>(w));
  if (!os) throw IoError("failed writing TSDF1 stream");
}

// The file does not carry max_weight; pass the value the volume should keep
// fusing with.
inline TsdfVolume read_tsdf(std::istream& is, double max_weight = 64.0) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kTsdfMagic) {
    throw IoError("not a TSDF1 file");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kTsdfVersion) throw IoError("unsupported TSDF1 version");
  (void)detail::get_le<std::uint32_t>(is);
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = detail::get_le<double>(is);
  const double voxel = detail::get_le<double>(is);
  Index3 dims;
  for (int a = 0; a < 3; ++a) {
    const auto d = detail::get_le<std::uint32_t>(is);
    if (d < 2 || d > 4096) throw IoError("implausible TSDF1 dimensions");
    dims[a] = static_cast<int>(d);
  }
  const double trunc = detail::get_le<double>(is);
  TsdfVolume vol(origin, voxel, dims, trunc, max_weight);
  auto values = vol.mutable_values();
  auto weights = vol.mutable_weights();
  for (double& v : values) v = detail::get_le<float>(is);
  for (double& w : weights) w = detail::get_le<float>(is);
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (!(weights[n] >= 0.0)) throw IoError("negative weight in TSDF1 file");
    if (weights[n] == 0.0) values[n] = trunc;
    values[n] = std::clamp(values[n], -trunc, trunc);
  }
  return vol;
}

inline void save_tsdf(const std::filesystem::path& path, const TsdfVolume& vol) {
  auto os = detail::open_out(path);
  write_tsdf(os, vol);
}

inline TsdfVolume load_tsdf(const std::filesystem::path& path,
                            double max_weight = 64.0) {
  auto is = detail::open_in(path);
  return read_tsdf(is, max_weight);
}

// PFM, single channel ("Pf"), negative scale = little-endian. Rows are
// stored bottom-to-top as the format prescribes.
inline void write_pfm(std::ostream& os, const DepthImage& img) {
  os << "Pf\n" << img.width << ' ' << img.height << "\n-1.0\n";
  for (int row = img.height - 1; row >= 0; --row) {
    for (int col = 0; col < img.width; ++col) detail::put_le<float>(os, img.at(col, row));
  }
  if (!os) throw IoError("failed writing PFM stream");
}

inline DepthImage read_pfm(std::istream& is) {
  std::string tag;
  int w = 0, h = 0;
  double scale = 0.0;
  if (!(is >> tag >> w >> h >> scale) || tag != "Pf") {
    throw IoError("not a single-channel PFM");
  }
  if (w <= 0 || h <= 0) throw IoError("bad PFM size");
  is.get();  // single whitespace before the raster
  DepthImage img(w, h);
  for (int row = h - 1; row >= 0; --row) {
    for (int col = 0; col < w; ++col) {
      std::array<char, 4> bytes;
      if (!is.read(bytes.data(), 4)) throw IoError("truncated PFM raster");
      const bool file_little = scale < 0.0;
      if (file_little != (std::endian::native == std::endian::little)) {
        std::reverse(bytes.begin(), bytes.end());
      }
      float v;
      std::memcpy(&v, bytes.data(), 4);
      img.at(col, row) = v;
    }
  }
  return img;
}

inline void save_pfm(const std::filesystem::path& path, const DepthImage& img) {
  auto os = detail::open_out(path);
  write_pfm(os, img);
}

inline DepthImage load_pfm(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_pfm(is);
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  auto os = detail::open_out(path);
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace cpgrasp
