#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mexhdr/image.hpp"

namespace mexhdr {

namespace detail {

inline void byteswap32(float* p, std::size_t n) {
  auto* b = reinterpret_cast<std::uint8_t*>(p);
  for (std::size_t i = 0; i < n; ++i, b += 4) {
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
  }
}

constexpr bool host_little_endian() {
  return std::endian::native == std::endian::little;
}

}  // namespace detail

/// Reads a PFM file ("PF" color / "Pf" grayscale). Rows are stored bottom-up;
/// the sign of the scale field selects byte order.
inline Image read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_pfm: cannot open '" + path + "'");
  std::string tag;
  in >> tag;
  int channels;
  if (tag == "PF")
    channels = 3;
  else if (tag == "Pf")
    channels = 1;
  else
    throw Error("read_pfm: '" + path + "' is not a PFM file");
  int w = 0, h = 0;
  double scale = 0.0;
  in >> w >> h >> scale;
  if (!in || w <= 0 || h <= 0 || scale == 0.0)
    throw Error("read_pfm: malformed header in '" + path + "'");
  in.get();  // single whitespace byte before the raster
  Image img(h, w, channels);
  std::size_t row_floats = static_cast<std::size_t>(w) * channels;
  for (int y = h - 1; y >= 0; --y) {
    float* row = &img.data[static_cast<std::size_t>(y) * row_floats];
    in.read(reinterpret_cast<char*>(row), row_floats * sizeof(float));
    if (!in) throw Error("read_pfm: truncated file '" + path + "'");
  }
  const bool file_little = scale < 0.0;
  if (file_little != detail::host_little_endian())
    detail::byteswap32(img.data.data(), img.data.size());
  const float mag = static_cast<float>(std::abs(scale));
  if (mag != 1.0f)
    for (auto& v : img.data) v *= mag;
  return img;
}

/// Writes a PFM file in host byte order with |scale| = 1 (lossless floats).
inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_pfm: only 1- or 3-channel images supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_pfm: cannot open '" + path + "' for writing");
  out << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << (detail::host_little_endian() ? "-1.0" : "1.0") << "\n";
  std::size_t row_floats = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = img.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&img.data[static_cast<std::size_t>(y) * row_floats]),
              row_floats * sizeof(float));
  if (!out) throw Error("write_pfm: write failed for '" + path + "'");
}

}  // namespace mexhdr
