#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "mexhdr/crf.hpp"
#include "mexhdr/image.hpp"
#include "mexhdr/io.hpp"
#include "mexhdr/manifest.hpp"

namespace mexhdr {

/// Forms an LDR image from radiance: clip(E*dt) -> response curve ->
/// round-to-nearest quantization at the requested bit depth.
inline LdrImage simulate_ldr(const RadianceMap& radiance, const ExposureMeta& meta,
                             const Crf& crf, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16)
    throw Error("simulate_ldr: bit depth must be 8 or 16");
  LdrImage out;
  out.meta = meta;
  out.crf_name = crf.name;
  out.bit_depth = bit_depth;
  const Image& E = radiance.pixels;
  out.pixels = Image(E.height, E.width, E.channels);
  const float dt = static_cast<float>(meta.delta_t);
  for (std::size_t i = 0; i < E.data.size(); ++i) {
    float x = clamp01(E.data[i] * dt);
    float b = static_cast<float>(apply_crf(crf, x));
    out.pixels.data[i] = quantize_level(b, bit_depth);
  }
  return out;
}

/// Simulates one image per EV offset (dt = 2^ev); EVs must be sorted,
/// duplicates are rejected.
inline ExposureStack synth_stack(const RadianceMap& radiance, const std::vector<double>& ev_offsets,
                                 const Crf& crf, int bit_depth = 8,
                                 const std::string& scene_id = "") {
  if (ev_offsets.empty()) throw Error("synth_stack: no EV offsets given");
  for (std::size_t i = 1; i < ev_offsets.size(); ++i) {
    if (ev_offsets[i] == ev_offsets[i - 1]) throw Error("synth_stack: duplicate EV offsets");
    if (ev_offsets[i] < ev_offsets[i - 1]) throw Error("synth_stack: EV offsets must be ascending");
  }
  ExposureStack stack;
  stack.scene_id = scene_id;
  for (double ev : ev_offsets)
    stack.images.push_back(simulate_ldr(radiance, ExposureMeta::from_ev(ev), crf, bit_depth));
  stack.validate();
  return stack;
}

/// Renders every (HDR scene x curve) pair in `hdr_dir` into LDR stacks under
/// `out_dir` and returns the dataset manifest (also written to
/// out_dir/manifest.tsv). Unreadable inputs are skipped with a warning.
inline Manifest synth_dataset(const std::string& hdr_dir, const std::vector<Crf>& crfs,
                              const std::vector<double>& ev_offsets, const std::string& out_dir,
                              int bit_depth = 8) {
  if (crfs.empty()) throw Error("synth_dataset: no response curves given");
  namespace fs = std::filesystem;
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(hdr_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = detail::lower_ext(entry.path().string());
    if (ext == ".hdr" || ext == ".pfm") inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  fs::create_directories(out_dir);

  // The manifest file keeps paths relative to its directory; the returned
  // copy resolves them for immediate use.
  Manifest relative, resolved;
  for (const auto& input : inputs) {
    RadianceMap radiance;
    try {
      radiance = read_hdr(input.string());
    } catch (const Error& e) {
      std::cerr << "warning: skipping unreadable HDR '" << input.string() << "': " << e.what()
                << "\n";
      continue;
    }
    std::string scene = input.stem().string();
    for (const auto& crf : crfs) {
      ExposureStack stack = synth_stack(radiance, ev_offsets, crf, bit_depth, scene);
      for (std::size_t i = 0; i < stack.images.size(); ++i) {
        const LdrImage& img = stack.images[i];
        std::string name = scene + "_" + crf.name + "_ev" + format_ev(img.meta.ev_offset) + ".png";
        std::string full = (fs::path(out_dir) / name).string();
        write_ldr(full, img);
        relative.entries.push_back({scene, crf.name, img.meta.ev_offset, name, img.bit_depth});
        resolved.entries.push_back({scene, crf.name, img.meta.ev_offset, full, img.bit_depth});
      }
    }
  }
  if (relative.entries.empty())
    throw Error("synth_dataset: no usable HDR inputs in '" + hdr_dir + "'");
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), relative);
  return resolved;
}

}  // namespace mexhdr
