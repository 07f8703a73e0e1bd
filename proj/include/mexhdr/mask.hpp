#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

/// How the two one-sided terms combine into the final mask.
enum class MaskVariant {
  kPaperLiteralMax,  // max(lambda1, lambda2): 1 at both extremes
  kMinCombination,   // min(lambda1, lambda2): 0 at both extremes (default)
};

struct MaskConfig {
  double gamma = 0.05;  // exposedness threshold, in (0, 0.5)
  MaskVariant variant = MaskVariant::kMinCombination;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 0.5))
      throw Error("MaskConfig: gamma must lie in (0, 0.5)");
  }
};

/// Soft per-pixel well-exposedness weights in [0,1], derived from luma.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// The two one-sided terms evaluated at luma y: lambda1 penalizes dark
/// pixels, lambda2 penalizes bright ones.
inline double mask_lambda1(double y, double gamma) {
  return 1.0 - std::max(0.0, (1.0 - gamma) - y) / (1.0 - gamma);
}
inline double mask_lambda2(double y, double gamma) {
  return 1.0 - std::max(0.0, y - gamma) / (1.0 - gamma);
}

inline double mask_value(double y, const MaskConfig& cfg) {
  double l1 = mask_lambda1(y, cfg.gamma);
  double l2 = mask_lambda2(y, cfg.gamma);
  return cfg.variant == MaskVariant::kPaperLiteralMax ? std::max(l1, l2)
                                                      : std::min(l1, l2);
}

/// Well-exposedness mask of an LDR image (luma is BT.601).
inline Mask well_exposed_mask(const LdrImage& img, const MaskConfig& cfg = {}) {
  cfg.validate();
  Mask m;
  m.width = img.pixels.width;
  m.height = img.pixels.height;
  std::vector<double> luma = luma_plane(img.pixels);
  m.values.resize(luma.size());
  for (std::size_t i = 0; i < luma.size(); ++i)
    m.values[i] = static_cast<float>(mask_value(luma[i], cfg));
  return m;
}

/// Per-pixel, per-channel multiplication by the mask weight.
inline Image apply_mask(const Image& img, const Mask& m) {
  if (img.width != m.width || img.height != m.height)
    throw Error("apply_mask: shape mismatch");
  Image out(img.height, img.width, img.channels);
  std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < img.channels; ++c)
      out.data[i * img.channels + c] = img.data[i * img.channels + c] * m.values[i];
  return out;
}

inline LdrImage apply_mask(const LdrImage& img, const Mask& m) {
  LdrImage out = img;
  out.pixels = apply_mask(img.pixels, m);
  return out;
}

/// Masks an image with its own well-exposedness mask (the encoder input).
inline LdrImage mask_input(const LdrImage& img, const MaskConfig& cfg = {}) {
  return apply_mask(img, well_exposed_mask(img, cfg));
}

}  // namespace mexhdr
