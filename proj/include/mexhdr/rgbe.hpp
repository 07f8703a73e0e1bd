#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

namespace detail {

inline void float_to_rgbe(float r, float g, float b, std::uint8_t out[4]) {
  float v = std::max(r, std::max(g, b));
  if (!(v >= 1e-32f)) {
    out[0] = out[1] = out[2] = out[3] = 0;
    return;
  }
  int e = 0;
  std::frexp(v, &e);
  // Round-to-nearest mantissas; bump the exponent if the max would overflow.
  double q = std::ldexp(1.0, 8 - e);
  long ri = std::lround(r * q), gi = std::lround(g * q), bi = std::lround(b * q);
  if (std::max({ri, gi, bi}) > 255) {
    ++e;
    q = std::ldexp(1.0, 8 - e);
    ri = std::lround(r * q);
    gi = std::lround(g * q);
    bi = std::lround(b * q);
  }
  out[0] = static_cast<std::uint8_t>(std::max(0L, ri));
  out[1] = static_cast<std::uint8_t>(std::max(0L, gi));
  out[2] = static_cast<std::uint8_t>(std::max(0L, bi));
  out[3] = static_cast<std::uint8_t>(e + 128);
}

inline void rgbe_to_float(const std::uint8_t in[4], float* r, float* g, float* b) {
  if (in[3] == 0) {
    *r = *g = *b = 0.0f;
    return;
  }
  float f = std::ldexp(1.0f, static_cast<int>(in[3]) - (128 + 8));
  *r = in[0] * f;
  *g = in[1] * f;
  *b = in[2] * f;
}

inline void rgbe_write_rle_component(std::ofstream& out, const std::uint8_t* data,
                                     int n, int stride) {
  int i = 0;
  while (i < n) {
    // Find the next run of >= 4 equal bytes.
    int run_start = i;
    int run_len = 0;
    while (run_start < n) {
      run_len = 1;
      while (run_start + run_len < n && run_len < 127 &&
             data[(run_start + run_len) * stride] == data[run_start * stride])
        ++run_len;
      if (run_len >= 4) break;
      run_start += run_len;
    }
    // Dump literals up to the run.
    while (i < (run_len >= 4 ? run_start : n)) {
      int count = std::min((run_len >= 4 ? run_start : n) - i, 128);
      std::uint8_t hdr = static_cast<std::uint8_t>(count);
      out.put(static_cast<char>(hdr));
      for (int k = 0; k < count; ++k) out.put(static_cast<char>(data[(i + k) * stride]));
      i += count;
    }
    if (run_len >= 4) {
      out.put(static_cast<char>(128 + run_len));
      out.put(static_cast<char>(data[run_start * stride]));
      i = run_start + run_len;
    }
  }
}

}  // namespace detail

/// Reads a Radiance RGBE (.hdr) file; flat and RLE scanlines supported.
inline Image read_rgbe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_rgbe: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("#?", 0) != 0)
    throw Error("read_rgbe: '" + path + "' is not a Radiance file");
  bool format_ok = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;  // blank line ends the header
    if (line.rfind("FORMAT=", 0) == 0) {
      if (line != "FORMAT=32-bit_rle_rgbe")
        throw Error("read_rgbe: unsupported format in '" + path + "'");
      format_ok = true;
    }
  }
  if (!format_ok) throw Error("read_rgbe: missing FORMAT line in '" + path + "'");
  int w = 0, h = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "-Y %d +X %d", &h, &w) != 2 ||
      w <= 0 || h <= 0)
    throw Error("read_rgbe: unsupported resolution line in '" + path + "'");

  Image img(h, w, 3);
  std::vector<std::uint8_t> scan(static_cast<std::size_t>(w) * 4);
  for (int y = 0; y < h; ++y) {
    std::uint8_t head[4];
    if (!in.read(reinterpret_cast<char*>(head), 4))
      throw Error("read_rgbe: truncated file '" + path + "'");
    if (head[0] == 2 && head[1] == 2 && ((head[2] << 8) | head[3]) == w && w >= 8) {
      // New-style RLE: four separate component streams.
      for (int c = 0; c < 4; ++c) {
        int x = 0;
        while (x < w) {
          int code = in.get();
          if (code == EOF) throw Error("read_rgbe: truncated file '" + path + "'");
          if (code > 128) {
            int count = code - 128;
            int value = in.get();
            if (value == EOF || x + count > w)
              throw Error("read_rgbe: corrupt RLE data in '" + path + "'");
            for (int k = 0; k < count; ++k) scan[(x + k) * 4 + c] = static_cast<std::uint8_t>(value);
            x += count;
          } else {
            if (code == 0 || x + code > w)
              throw Error("read_rgbe: corrupt RLE data in '" + path + "'");
            for (int k = 0; k < code; ++k) {
              int value = in.get();
              if (value == EOF) throw Error("read_rgbe: truncated file '" + path + "'");
              scan[(x + k) * 4 + c] = static_cast<std::uint8_t>(value);
            }
            x += code;
          }
        }
      }
    } else {
      // Flat scanline (with legacy (1,1,1,count) repeat pixels).
      std::memcpy(scan.data(), head, 4);
      int x = 1;
      int shift = 0;
      while (x < w) {
        std::uint8_t px[4];
        if (!in.read(reinterpret_cast<char*>(px), 4))
          throw Error("read_rgbe: truncated file '" + path + "'");
        if (px[0] == 1 && px[1] == 1 && px[2] == 1) {
          int count = px[3] << shift;
          if (x == 0 || x + count > w)
            throw Error("read_rgbe: corrupt legacy RLE in '" + path + "'");
          for (int k = 0; k < count; ++k)
            std::memcpy(&scan[(x + k) * 4], &scan[(x - 1) * 4], 4);
          x += count;
          shift += 8;
        } else {
          std::memcpy(&scan[x * 4], px, 4);
          ++x;
          shift = 0;
        }
      }
    }
    for (int x = 0; x < w; ++x)
      detail::rgbe_to_float(&scan[x * 4], &img.at(y, x, 0), &img.at(y, x, 1), &img.at(y, x, 2));
  }
  return img;
}

/// Writes a Radiance RGBE (.hdr) file with RLE scanlines where possible.
inline void write_rgbe(const std::string& path, const Image& img) {
  if (img.channels != 3) throw Error("write_rgbe: expected a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_rgbe: cannot open '" + path + "' for writing");
  out << "#?RADIANCE\n";
  out << "FORMAT=32-bit_rle_rgbe\n\n";
  out << "-Y " << img.height << " +X " << img.width << "\n";

  const int w = img.width;
  std::vector<std::uint8_t> scan(static_cast<std::size_t>(w) * 4);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < w; ++x)
      detail::float_to_rgbe(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), &scan[x * 4]);
    if (w >= 8 && w < 32768) {
      std::uint8_t head[4] = {2, 2, static_cast<std::uint8_t>(w >> 8),
                              static_cast<std::uint8_t>(w & 0xff)};
      out.write(reinterpret_cast<const char*>(head), 4);
      for (int c = 0; c < 4; ++c)
        detail::rgbe_write_rle_component(out, scan.data() + c, w, 4);
    } else {
      out.write(reinterpret_cast<const char*>(scan.data()), scan.size());
    }
  }
  if (!out) throw Error("write_rgbe: write failed for '" + path + "'");
}

}  // namespace mexhdr
