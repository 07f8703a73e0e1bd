#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mexhdr/crf.hpp"
#include "mexhdr/image.hpp"
#include "mexhdr/mask.hpp"

namespace mexhdr {

enum class MergeMethod {
  kDebevecWeighted,  // weighted average of log irradiance estimates
  kRobertsonMl,      // maximum-likelihood weighted estimate
};

struct MergeConfig {
  MergeMethod method = MergeMethod::kDebevecWeighted;
  double saturation_epsilon = 1e-4;  // weight floor below which a sample is dropped
};

/// Hat weighting over the [0,1] pixel domain: zero at the extremes, peak at
/// mid-gray.
inline double hat_weight(double z) { return std::max(0.0, std::min(z, 1.0 - z)); }

/// Merges an exposure stack into linear radiance with a known inverse
/// response. Pixels where every sample's weight vanishes fall back to the
/// estimate from the extreme exposure (shortest when saturated, longest when
/// black); `fallback_mask`, when given, marks those pixels.
inline RadianceMap merge(const ExposureStack& stack, const Crf& inv_source_crf,
                         const MergeConfig& cfg = {}, Mask* fallback_mask = nullptr) {
  stack.validate();
  if (stack.images.size() < 2) throw Error("merge: need at least 2 images");
  const Image& first = stack.images[0].pixels;
  const int h = first.height, w = first.width, c = first.channels;
  const std::size_t count = stack.images.size();

  RadianceMap out;
  out.pixels = Image(h, w, c);
  if (fallback_mask) {
    fallback_mask->width = w;
    fallback_mask->height = h;
    fallback_mask->values.assign(static_cast<std::size_t>(w) * h, 0.0f);
  }

  std::vector<double> dts(count), log_dts(count);
  for (std::size_t i = 0; i < count; ++i) {
    dts[i] = stack.images[i].meta.delta_t;
    log_dts[i] = std::log(dts[i]);
  }
  constexpr double kLogFloor = 1e-12;  // keeps log(f_inv) finite at pure black

  for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
    bool any_valid = false;
    for (int ch = 0; ch < c; ++ch) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        double z = stack.images[i].pixels.data[p * c + ch];
        double wz = hat_weight(z);
        if (wz <= cfg.saturation_epsilon) continue;
        double x = invert_crf(inv_source_crf, z);
        if (cfg.method == MergeMethod::kDebevecWeighted) {
          num += wz * (std::log(std::max(x, kLogFloor)) - log_dts[i]);
          den += wz;
        } else {
          num += wz * x * dts[i];
          den += wz * dts[i] * dts[i];
        }
      }
      double e;
      if (den > 0.0) {
        any_valid = true;
        e = cfg.method == MergeMethod::kDebevecWeighted ? std::exp(num / den) : num / den;
      } else {
        // All samples clipped: shortest exposure bounds a saturated pixel,
        // longest bounds a black one.
        double z_short = stack.images.front().pixels.data[p * c + ch];
        bool saturated = z_short > 0.5;
        const LdrImage& pick = saturated ? stack.images.front() : stack.images.back();
        e = invert_crf(inv_source_crf, pick.pixels.data[p * c + ch]) / pick.meta.delta_t;
      }
      out.pixels.data[p * c + ch] = static_cast<float>(e);
    }
    if (fallback_mask && !any_valid) fallback_mask->values[p] = 1.0f;
  }
  return out;
}

/// Photographic global tone mapping parameters.
struct TonemapParams {
  double key_a = 0.18;   // mid-gray target
  double l_white = 0.0;  // burn-out luminance; <= 0 means "max scene luminance"
};

/// The scalar compression curve: ld = lm*(1 + lm*inv_white2)/(1 + lm).
/// inv_white2 = 1/l_white^2 (0 for an unbounded burn-out luminance).
inline double reinhard_curve(double lm, double inv_white2) {
  return lm * (1.0 + lm * inv_white2) / (1.0 + lm);
}

/// Global photographic tone mapping: scales luminance to the key around the
/// log-average, compresses with a burn-out term, and rescales color.
inline LdrImage tonemap_reinhard(const RadianceMap& radiance, const TonemapParams& p = {}) {
  if (!(p.key_a > 0.0)) throw Error("tonemap_reinhard: key must be positive");
  const Image& E = radiance.pixels;
  if (E.channels != 3 && E.channels != 1)
    throw Error("tonemap_reinhard: expected 1- or 3-channel radiance");
  std::vector<double> L = luma_plane(E);
  constexpr double kDelta = 1e-6;

  double log_sum = 0.0;
  for (double l : L) log_sum += std::log(l + kDelta);
  const double l_avg = std::exp(log_sum / static_cast<double>(L.size()));

  std::vector<double> lm(L.size());
  double lm_max = 0.0;
  for (std::size_t i = 0; i < L.size(); ++i) {
    lm[i] = p.key_a * L[i] / l_avg;
    lm_max = std::max(lm_max, lm[i]);
  }
  double l_white = p.l_white > 0.0 ? p.l_white : std::max(lm_max, kDelta);
  const double inv_white2 = 1.0 / (l_white * l_white);

  LdrImage out;
  out.bit_depth = 0;  // float output, not quantized
  out.meta = ExposureMeta::from_ev(0.0);
  out.pixels = Image(E.height, E.width, E.channels);
  for (std::size_t i = 0; i < L.size(); ++i) {
    double ld = reinhard_curve(lm[i], inv_white2);
    double scale = L[i] > 0.0 ? ld / L[i] : 0.0;
    for (int ch = 0; ch < E.channels; ++ch) {
      double v = E.data[i * E.channels + ch] * scale;
      out.pixels.data[i * E.channels + ch] = static_cast<float>(clamp01(v));
    }
  }
  return out;
}

}  // namespace mexhdr
