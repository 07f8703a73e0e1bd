#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

/// Monotone camera response curve sampled at matching (exposure, brightness)
/// points, normalized so brightness spans exactly [0,1].
struct Crf {
  std::string name;
  std::vector<double> samples_x;  // ascending sensor exposure in [0,1]
  std::vector<double> samples_b;  // nondecreasing brightness in [0,1]

  std::size_t size() const { return samples_x.size(); }

  void validate() const {
    if (samples_x.size() != samples_b.size() || samples_x.size() < 2)
      throw Error("Crf '" + name + "': need matching sample arrays of length >= 2");
    for (std::size_t i = 1; i < samples_x.size(); ++i) {
      if (!(samples_x[i] > samples_x[i - 1]))
        throw Error("Crf '" + name + "': exposure samples not strictly increasing at index " +
                    std::to_string(i));
      if (samples_b[i] < samples_b[i - 1])
        throw Error("Crf '" + name + "': brightness decreases at index " + std::to_string(i));
    }
    if (samples_b.front() != 0.0 || samples_b.back() != 1.0)
      throw Error("Crf '" + name + "': brightness not normalized to [0,1]");
  }

  /// Rescales both axes to [0,1]; brightness ends up exactly {0,...,1}.
  void normalize() {
    if (samples_x.size() != samples_b.size() || samples_x.size() < 2)
      throw Error("Crf '" + name + "': need matching sample arrays of length >= 2");
    const double x0 = samples_x.front(), x1 = samples_x.back();
    const double b0 = samples_b.front(), b1 = samples_b.back();
    if (!(x1 > x0)) throw Error("Crf '" + name + "': degenerate exposure range");
    if (!(b1 > b0)) throw Error("Crf '" + name + "': degenerate brightness range");
    for (auto& x : samples_x) x = (x - x0) / (x1 - x0);
    for (auto& b : samples_b) b = (b - b0) / (b1 - b0);
    samples_x.front() = 0.0;
    samples_x.back() = 1.0;
    samples_b.front() = 0.0;
    samples_b.back() = 1.0;
  }
};

/// Identity response, f(x) = x.
inline Crf identity_crf(std::size_t n = 1024) {
  Crf c;
  c.name = "identity";
  c.samples_x.resize(n);
  c.samples_b.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    c.samples_x[i] = c.samples_b[i] = static_cast<double>(i) / (n - 1);
  return c;
}

/// Gamma-encoding response, f(x) = x^(1/gamma).
inline Crf gamma_crf(double gamma, std::size_t n = 1024) {
  Crf c;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "gamma%.1f", gamma);
  c.name = buf;
  c.samples_x.resize(n);
  c.samples_b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = static_cast<double>(i) / (n - 1);
    c.samples_x[i] = x;
    c.samples_b[i] = std::pow(x, 1.0 / gamma);
  }
  c.samples_b.back() = 1.0;
  return c;
}

/// Applies f to a single value. Inputs outside [0,1] are clipped first
/// (clipping is part of the forward pipeline); `clipped`, when given, is set
/// if any clipping happened.
inline double apply_crf(const Crf& crf, double x, bool* clipped = nullptr) {
  if (x < 0.0 || x > 1.0) {
    if (clipped) *clipped = true;
    x = clamp01(x);
  }
  const auto& xs = crf.samples_x;
  const auto& bs = crf.samples_b;
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  if (it == xs.begin()) return bs.front();
  if (it == xs.end()) return bs.back();
  std::size_t i = static_cast<std::size_t>(it - xs.begin());
  double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return bs[i - 1] + t * (bs[i] - bs[i - 1]);
}

/// Numeric inverse of f by interpolation on the swapped sample arrays.
/// Brightness values attained on a flat (non-invertible) run map to the
/// midpoint of the preimage interval.
inline double invert_crf(const Crf& crf, double b) {
  b = clamp01(b);
  const auto& xs = crf.samples_x;
  const auto& bs = crf.samples_b;
  // [lo, hi) = run of samples with value >= b resp. > b.
  auto lo = std::lower_bound(bs.begin(), bs.end(), b);
  auto hi = std::upper_bound(bs.begin(), bs.end(), b);
  if (lo == bs.end()) return xs.back();
  std::size_t i_lo = static_cast<std::size_t>(lo - bs.begin());
  std::size_t i_hi = static_cast<std::size_t>(hi - bs.begin());
  if (*lo == b) {
    // Exact hit; i_hi - i_lo > 1 means a flat run, take its midpoint.
    return 0.5 * (xs[i_lo] + xs[i_hi - 1]);
  }
  if (i_lo == 0) return xs.front();
  double b0 = bs[i_lo - 1], b1 = bs[i_lo];
  double t = (b - b0) / (b1 - b0);
  return xs[i_lo - 1] + t * (xs[i_lo] - xs[i_lo - 1]);
}

/// Elementwise apply_crf over an image.
inline Image apply_crf(const Crf& crf, const Image& img, bool* clipped = nullptr) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = static_cast<float>(apply_crf(crf, img.data[i], clipped));
  return out;
}

/// Elementwise invert_crf over an image.
inline Image invert_crf(const Crf& crf, const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = static_cast<float>(invert_crf(crf, img.data[i]));
  return out;
}

/// Selects curves from a parsed file: by explicit names, or `count` curves at
/// evenly strided indices (count=5 over 201 curves picks 0,50,100,150,200).
struct CrfSelection {
  std::vector<std::string> names;  // wins when nonempty
  int count = 0;                   // 0 = all curves
};

namespace detail {

inline bool read_sample_line(std::istream& in, const std::string& marker,
                             std::size_t expected, std::vector<double>& out,
                             const std::string& curve) {
  std::string line;
  if (!std::getline(in, line)) return false;
  auto eq = line.find('=');
  if (line.empty() || (line[0] != marker[0] && line.find(marker) == std::string::npos))
    throw Error("DoRF curve '" + curve + "': expected '" + marker + "' sample line");
  std::string values = eq == std::string::npos ? std::string() : line.substr(eq + 1);
  out.clear();
  out.reserve(expected);
  std::istringstream vs(values);
  double v;
  while (vs >> v) out.push_back(v);
  // Values may continue on following lines until the expected count is read.
  while (out.size() < expected && std::getline(in, line)) {
    std::istringstream ls(line);
    std::size_t before = out.size();
    while (ls >> v) out.push_back(v);
    if (out.size() == before) break;  // non-numeric line: malformed
  }
  if (out.size() != expected)
    throw Error("DoRF curve '" + curve + "': expected " + std::to_string(expected) +
                " samples, got " + std::to_string(out.size()));
  return true;
}

}  // namespace detail

/// Parses a DoRF-layout text file: per curve a name line, an info line, an
/// irradiance sample line and a brightness sample line of `samples` values
/// each. Returns curves normalized to the Crf invariants, keeping file order.
inline std::vector<Crf> load_dorf(const std::string& path, const CrfSelection& selection = {},
                                  std::size_t samples = 1024) {
  std::ifstream in(path);
  if (!in) throw Error("load_dorf: cannot open '" + path + "'");
  std::vector<Crf> all;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::string name = line;
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    std::string info;
    if (!std::getline(in, info))
      throw Error("DoRF curve '" + name + "': truncated entry");
    Crf c;
    c.name = name;
    detail::read_sample_line(in, "I", samples, c.samples_x, name);
    detail::read_sample_line(in, "B", samples, c.samples_b, name);
    for (std::size_t i = 1; i < c.samples_b.size(); ++i)
      if (c.samples_b[i] < c.samples_b[i - 1])
        throw Error("DoRF curve '" + name + "': brightness decreases at index " +
                    std::to_string(i));
    c.normalize();
    c.validate();
    all.push_back(std::move(c));
  }
  if (all.empty()) throw Error("load_dorf: no curves in '" + path + "'");

  if (!selection.names.empty()) {
    std::vector<Crf> picked;
    for (const auto& c : all)
      if (std::find(selection.names.begin(), selection.names.end(), c.name) !=
          selection.names.end())
        picked.push_back(c);
    if (picked.size() != selection.names.size())
      throw Error("load_dorf: not all requested curve names found in '" + path + "'");
    return picked;
  }
  if (selection.count > 0 && static_cast<std::size_t>(selection.count) < all.size()) {
    std::vector<Crf> picked;
    int k = selection.count;
    std::size_t n = all.size();
    for (int i = 0; i < k; ++i) {
      std::size_t idx = k == 1 ? 0
                               : static_cast<std::size_t>(
                                     std::llround(static_cast<double>(i) * (n - 1) / (k - 1)));
      picked.push_back(all[idx]);
    }
    return picked;
  }
  return all;
}

/// Writes curves in the DoRF text layout accepted by load_dorf.
inline void write_dorf(const std::string& path, const std::vector<Crf>& curves) {
  std::ofstream out(path);
  if (!out) throw Error("write_dorf: cannot open '" + path + "' for writing");
  out.precision(9);
  for (const auto& c : curves) {
    out << c.name << "\n";
    out << "graph type: response curve\n";
    out << "I =";
    for (double v : c.samples_x) out << ' ' << v;
    out << "\nB =";
    for (double v : c.samples_b) out << ' ' << v;
    out << "\n";
  }
}

}  // namespace mexhdr
