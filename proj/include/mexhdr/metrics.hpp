#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"
#include "mexhdr/merge.hpp"

namespace mexhdr {

inline constexpr double kPsnrCapDb = 99.0;

/// Peak signal-to-noise ratio in dB over all channels; identical images
/// report the cap (99 dB).
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  if (!a.same_shape(b)) throw Error("psnr: shape mismatch");
  if (!(peak > 0.0)) throw Error("psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {

inline std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i)
    sum += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian filter, valid region only (output is (h-2r) x (w-2r)).
inline std::vector<double> gaussian_valid(const std::vector<double>& img, int h, int w,
                                          const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(h) * (w - 2 * r));
  for (int y = 0; y < h; ++y)
    for (int x = r; x < w - r; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * (w - 2 * r) + (x - r)] = s;
    }
  const int w2 = w - 2 * r;
  std::vector<double> out(static_cast<std::size_t>(h - 2 * r) * w2);
  for (int y = r; y < h - r; ++y)
    for (int x = 0; x < w2; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[static_cast<std::size_t>(y + i) * w2 + x];
      out[static_cast<std::size_t>(y - r) * w2 + x] = s;
    }
  return out;
}

inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                         double peak) {
  const int radius = 5;  // 11x11 window
  const double sigma = 1.5, k1 = 0.01, k2 = 0.03;
  const double c1 = (k1 * peak) * (k1 * peak);
  const double c2 = (k2 * peak) * (k2 * peak);
  auto kern = gaussian_kernel(radius, sigma);

  std::size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto mu_a = gaussian_valid(a, h, w, kern);
  auto mu_b = gaussian_valid(b, h, w, kern);
  auto m_aa = gaussian_valid(aa, h, w, kern);
  auto m_bb = gaussian_valid(bb, h, w, kern);
  auto m_ab = gaussian_valid(ab, h, w, kern);

  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    double va = m_aa[i] - mu_a[i] * mu_a[i];
    double vb = m_bb[i] - mu_b[i] * mu_b[i];
    double cov = m_ab[i] - mu_a[i] * mu_b[i];
    double l = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
    double s = (2.0 * cov + c2) / (va + vb + c2);
    sum += l * s;
  }
  return sum / static_cast<double>(mu_a.size());
}

}  // namespace detail

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5, k1=0.01,
/// k2=0.03). Multi-channel images are scored per channel and averaged.
inline double ssim(const Image& a, const Image& b, double peak = 1.0) {
  if (!a.same_shape(b)) throw Error("ssim: shape mismatch");
  if (a.width < 11 || a.height < 11) throw Error("ssim: images must be at least 11x11");
  std::size_t n = static_cast<std::size_t>(a.width) * a.height;
  double total = 0.0;
  std::vector<double> pa(n), pb(n);
  for (int c = 0; c < a.channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[i * a.channels + c];
      pb[i] = b.data[i * b.channels + c];
    }
    total += detail::ssim_plane(pa, pb, a.height, a.width, peak);
  }
  return total / a.channels;
}

/// One row of the per-EV comparison table.
struct StackMetricsRow {
  double ev = 0.0;
  double psnr_db = 0.0;
  double ssim_score = 0.0;
};

/// PSNR/SSIM per EV between a predicted stack and its reference; EV sets
/// must match.
inline std::vector<StackMetricsRow> evaluate_stacks(const ExposureStack& pred,
                                                    const ExposureStack& ref) {
  auto evs = [](const ExposureStack& s) {
    std::string msg;
    for (const auto& img : s.images) msg += format_ev(img.meta.ev_offset) + " ";
    return msg;
  };
  bool match = pred.images.size() == ref.images.size();
  if (match)
    for (std::size_t i = 0; i < pred.images.size(); ++i)
      if (std::abs(pred.images[i].meta.ev_offset - ref.images[i].meta.ev_offset) > 1e-9)
        match = false;
  if (!match)
    throw Error("evaluate_stacks: EV mismatch (pred: " + evs(pred) + "vs ref: " + evs(ref) + ")");
  std::vector<StackMetricsRow> rows;
  for (std::size_t i = 0; i < pred.images.size(); ++i) {
    StackMetricsRow row;
    row.ev = ref.images[i].meta.ev_offset;
    row.psnr_db = psnr(pred.images[i].pixels, ref.images[i].pixels, 1.0);
    row.ssim_score = ssim(pred.images[i].pixels, ref.images[i].pixels, 1.0);
    rows.push_back(row);
  }
  return rows;
}

/// HDR comparison record: metrics on tone-mapped pairs plus linear-domain
/// PSNR after joint normalization by the reference's 99.9th-percentile luma.
struct HdrMetrics {
  double tonemapped_psnr_db = 0.0;
  double tonemapped_ssim = 0.0;
  double linear_psnr_db = 0.0;
};

/// Emits per-EV rows (scene, ev, psnr, ssim) plus a mean-aggregate row.
inline void write_stack_metrics_tsv(std::ostream& out, const std::string& scene_id,
                                    const std::vector<StackMetricsRow>& rows,
                                    bool header = true) {
  if (header) out << "scene\tev\tpsnr_db\tssim\n";
  char buf[128];
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%+.2f\t%.4f\t%.6f\n", scene_id.c_str(), r.ev, r.psnr_db,
                  r.ssim_score);
    out << buf;
    psnr_sum += r.psnr_db;
    ssim_sum += r.ssim_score;
  }
  if (!rows.empty()) {
    std::snprintf(buf, sizeof(buf), "%s\tmean\t%.4f\t%.6f\n", scene_id.c_str(),
                  psnr_sum / rows.size(), ssim_sum / rows.size());
    out << buf;
  }
}

inline HdrMetrics evaluate_hdr(const RadianceMap& pred, const RadianceMap& ref,
                               const TonemapParams& tmo = {}) {
  if (!pred.pixels.same_shape(ref.pixels)) throw Error("evaluate_hdr: shape mismatch");
  HdrMetrics out;
  LdrImage tm_pred = tonemap_reinhard(pred, tmo);
  LdrImage tm_ref = tonemap_reinhard(ref, tmo);
  out.tonemapped_psnr_db = psnr(tm_pred.pixels, tm_ref.pixels, 1.0);
  out.tonemapped_ssim = ssim(tm_pred.pixels, tm_ref.pixels, 1.0);

  std::vector<double> ref_luma = luma_plane(ref.pixels);
  std::vector<double> sorted = ref_luma;
  std::sort(sorted.begin(), sorted.end());
  double p999 = sorted[static_cast<std::size_t>(0.999 * (sorted.size() - 1))];
  if (p999 <= 0.0) p999 = 1.0;
  Image np = pred.pixels, nr = ref.pixels;
  const float inv = static_cast<float>(1.0 / p999);
  for (auto& v : np.data) v *= inv;
  for (auto& v : nr.data) v *= inv;
  out.linear_psnr_db = psnr(np, nr, 1.0);
  return out;
}

}  // namespace mexhdr
