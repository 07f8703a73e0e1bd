#pragma once

#include <filesystem>
#include <string>

#include "mexhdr/image.hpp"
#include "mexhdr/pfm.hpp"
#include "mexhdr/png_io.hpp"
#include "mexhdr/rgbe.hpp"

namespace mexhdr {

namespace detail {

inline std::string lower_ext(const std::string& path) {
  std::string e = std::filesystem::path(path).extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

}  // namespace detail

/// Reads an HDR image (.hdr Radiance RGBE or .pfm) as linear radiance.
inline RadianceMap read_hdr(const std::string& path) {
  std::string ext = detail::lower_ext(path);
  RadianceMap map;
  if (ext == ".hdr")
    map.pixels = read_rgbe(path);
  else if (ext == ".pfm")
    map.pixels = read_pfm(path);
  else
    throw Error("read_hdr: unsupported extension for '" + path + "'");
  for (auto& v : map.pixels.data)
    if (!(v >= 0.0f && std::isfinite(v))) v = 0.0f;
  return map;
}

/// Writes linear radiance as .hdr (RGBE) or .pfm, by extension.
inline void write_hdr(const std::string& path, const RadianceMap& map) {
  std::string ext = detail::lower_ext(path);
  if (ext == ".hdr")
    write_rgbe(path, map.pixels);
  else if (ext == ".pfm")
    write_pfm(path, map.pixels);
  else
    throw Error("write_hdr: unsupported extension for '" + path + "'");
}

/// Reads a display-referred PNG; exposure metadata defaults to EV 0.
inline LdrImage read_ldr(const std::string& path) {
  if (detail::lower_ext(path) != ".png")
    throw Error("read_ldr: unsupported extension for '" + path + "'");
  PngImage png = read_png(path);
  LdrImage img;
  img.pixels = std::move(png.image);
  img.bit_depth = png.bit_depth;
  img.meta = ExposureMeta::from_ev(0.0);
  return img;
}

/// Writes a display-referred image as PNG at its recorded bit depth.
inline void write_ldr(const std::string& path, const LdrImage& img) {
  if (detail::lower_ext(path) != ".png")
    throw Error("write_ldr: unsupported extension for '" + path + "'");
  int depth = img.bit_depth == 16 ? 16 : 8;
  write_png(path, img.pixels, depth);
}

}  // namespace mexhdr
