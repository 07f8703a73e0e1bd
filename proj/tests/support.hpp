#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "mexhdr/crf.hpp"
#include "mexhdr/image.hpp"
#include "mexhdr/rng.hpp"

namespace testsup {

/// Fresh scratch directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "mexhdr_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

/// Smooth synthetic radiance: diagonal ramp plus a couple of soft blobs, with
/// a dynamic range wide enough that some exposures clip at both ends.
inline mexhdr::RadianceMap make_radiance(int h, int w, std::uint64_t seed, double peak = 4.0) {
  mexhdr::RadianceMap map;
  map.pixels = mexhdr::Image(h, w, 3);
  mexhdr::Rng rng(seed);
  struct Blob {
    double cx, cy, r, gain;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 3; ++i)
    blobs.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.15, 0.4),
                     rng.uniform(0.5, 1.0)});
  double hue[3] = {rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double u = (x + 0.5) / w, v = (y + 0.5) / h;
      double base = 0.02 + 0.5 * (u + v);
      for (const auto& b : blobs) {
        double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
        base += b.gain * std::exp(-d2 / (2.0 * b.r * b.r));
      }
      for (int c = 0; c < 3; ++c)
        map.pixels.at(y, x, c) = static_cast<float>(peak * base * hue[c] / 2.5);
    }
  return map;
}

/// Random image with independent uniform channels in [lo, hi).
inline mexhdr::Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0,
                                  double hi = 1.0) {
  mexhdr::Image img(h, w, c);
  mexhdr::Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

/// Smoothstep-shaped response curve (monotone, S-shaped).
inline mexhdr::Crf scurve_crf(std::size_t n = 1024) {
  mexhdr::Crf c;
  c.name = "scurve";
  c.samples_x.resize(n);
  c.samples_b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(i) / (n - 1);
    c.samples_x[i] = x;
    c.samples_b[i] = x * x * (3.0 - 2.0 * x);
  }
  return c;
}

/// Logarithmic response (fast shadows, compressed highlights).
inline mexhdr::Crf log_crf(std::size_t n = 1024) {
  mexhdr::Crf c;
  c.name = "log10";
  c.samples_x.resize(n);
  c.samples_b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(i) / (n - 1);
    c.samples_x[i] = x;
    c.samples_b[i] = std::log10(1.0 + 9.0 * x);
  }
  c.samples_b.back() = 1.0;
  return c;
}

/// The five-curve family used across the tests.
inline std::vector<mexhdr::Crf> test_curves() {
  return {mexhdr::identity_crf(), mexhdr::gamma_crf(1.8), mexhdr::gamma_crf(2.2), scurve_crf(),
          log_crf()};
}

}  // namespace testsup
