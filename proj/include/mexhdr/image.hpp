#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mexhdr {

/// Error type thrown by every module.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Interleaved float image, row-major, `channels` values per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Exposure time in relative units together with its EV offset
/// (ev = log2(delta_t / delta_t_ref), delta_t_ref fixed at 1).
struct ExposureMeta {
  double delta_t = 1.0;
  double ev_offset = 0.0;

  static ExposureMeta from_ev(double ev) {
    ExposureMeta m;
    m.ev_offset = ev;
    m.delta_t = std::exp2(ev);
    return m;
  }
  static ExposureMeta from_delta_t(double dt) {
    if (!(dt > 0.0)) throw Error("ExposureMeta: delta_t must be positive");
    ExposureMeta m;
    m.delta_t = dt;
    m.ev_offset = std::log2(dt);
    return m;
  }
};

/// EV rendered as a signed two-decimal string ("+1.00", "-0.75").
inline std::string format_ev(double ev) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.2f", ev);
  return buf;
}

/// Display-referred image in [0,1] plus its exposure metadata.
struct LdrImage {
  Image pixels;
  ExposureMeta meta;
  std::string crf_name;  // empty when unknown
  int bit_depth = 8;     // 8 or 16; 0 when not quantized
};

/// Linear scene irradiance, nonnegative, arbitrary absolute scale.
struct RadianceMap {
  Image pixels;
  double exposure_unit = 1.0;
};

/// Images of one scene ordered by increasing exposure time.
struct ExposureStack {
  std::vector<LdrImage> images;
  std::string scene_id;

  void validate() const {
    if (images.empty()) throw Error("ExposureStack: empty stack");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (!images[i].pixels.same_shape(images[0].pixels))
        throw Error("ExposureStack: inconsistent image shapes");
      if (images[i].crf_name != images[0].crf_name)
        throw Error("ExposureStack: mixed response curves");
      if (i > 0 && !(images[i].meta.delta_t > images[i - 1].meta.delta_t))
        throw Error("ExposureStack: exposure times not strictly increasing");
    }
  }
};

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }
inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

/// Round-to-nearest quantization at `bit_depth` bits (values stay in [0,1]).
inline float quantize_level(float v, int bit_depth) {
  const float levels = static_cast<float>((1u << bit_depth) - 1u);
  return std::round(clamp01(v) * levels) / levels;
}

/// BT.601 luma from an RGB pixel.
inline double luma601(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

/// Per-pixel BT.601 luma plane of an RGB (or grayscale) image.
inline std::vector<double> luma_plane(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i];
    return out;
  }
  if (img.channels != 3) throw Error("luma_plane: expected 1 or 3 channels");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* p = &img.data[i * 3];
    out[i] = luma601(p[0], p[1], p[2]);
  }
  return out;
}

}  // namespace mexhdr
