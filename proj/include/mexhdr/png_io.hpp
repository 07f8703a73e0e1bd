#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Decoded PNG plus its bit depth.
struct PngImage {
  Image image;     // values in [0,1], exact multiples of 1/(2^depth - 1)
  int bit_depth = 8;
};

/// Reads an 8- or 16-bit PNG as grayscale (1 channel) or RGB (3 channels).
inline PngImage read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("read_png: cannot open '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw Error("read_png: '" + path + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: failed to decode '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // file is big-endian
  png_read_update_info(png, info);

  depth = png_get_bit_depth(png, info);
  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3)
    throw Error("read_png: unsupported channel count in '" + path + "'");

  std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  PngImage out;
  out.bit_depth = depth;
  out.image = Image(static_cast<int>(h), static_cast<int>(w), channels);
  const float levels = static_cast<float>((1u << depth) - 1u);
  std::size_t n = out.image.data.size();
  if (depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + i * 2, 2);
      out.image.data[i] = static_cast<float>(v) / levels;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      out.image.data[i] = static_cast<float>(buffer[i]) / levels;
  }
  return out;
}

/// Writes a [0,1] image as an 8- or 16-bit PNG (grayscale or RGB).
inline void write_png(const std::string& path, const Image& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16)
    throw Error("write_png: bit depth must be 8 or 16");
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_png: only 1- or 3-channel images supported");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("write_png: cannot open '" + path + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: failed to encode '" + path + "'");
  }
  png_init_io(png, fp.get());
  int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, img.width, img.height, bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const float levels = static_cast<float>((1u << bit_depth) - 1u);
  std::size_t row_values = static_cast<std::size_t>(img.width) * img.channels;
  if (bit_depth == 16) {
    std::vector<std::uint16_t> row(row_values);
    for (int y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < row_values; ++i) {
        float v = clamp01(img.data[static_cast<std::size_t>(y) * row_values + i]);
        row[i] = static_cast<std::uint16_t>(std::lround(v * levels));
      }
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  } else {
    std::vector<std::uint8_t> row(row_values);
    for (int y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < row_values; ++i) {
        float v = clamp01(img.data[static_cast<std::size_t>(y) * row_values + i]);
        row[i] = static_cast<std::uint8_t>(std::lround(v * levels));
      }
      png_write_row(png, row.data());
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mexhdr
