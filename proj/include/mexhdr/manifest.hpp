#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"
#include "mexhdr/io.hpp"

namespace mexhdr {

inline constexpr const char* kManifestMagic = "#mexhdr-manifest v1";

/// One LDR file reference: which scene/curve it belongs to and at what EV.
struct ManifestEntry {
  std::string scene_id;
  std::string crf_name;
  double ev = 0.0;
  std::string path;
  int bit_depth = 8;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  /// Groups entries into (scene_id, crf_name) stacks, each sorted by EV.
  std::map<std::pair<std::string, std::string>, std::vector<ManifestEntry>> stacks() const {
    std::map<std::pair<std::string, std::string>, std::vector<ManifestEntry>> out;
    for (const auto& e : entries) out[{e.scene_id, e.crf_name}].push_back(e);
    for (auto& [key, v] : out)
      std::sort(v.begin(), v.end(),
                [](const ManifestEntry& a, const ManifestEntry& b) { return a.ev < b.ev; });
    return out;
  }
};

/// Writes a manifest; paths are stored as given (keep them relative to the
/// manifest's directory for a relocatable dataset).
inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("write_manifest: cannot open '" + path + "' for writing");
  out << kManifestMagic << "\n";
  out.precision(10);
  for (const auto& e : m.entries)
    out << e.scene_id << '\t' << e.crf_name << '\t' << e.ev << '\t' << e.path << '\t'
        << e.bit_depth << '\n';
  if (!out) throw Error("write_manifest: write failed for '" + path + "'");
}

/// Reads a manifest; relative entry paths are resolved against the manifest
/// file's directory.
inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_manifest: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("read_manifest: empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestMagic)
    throw Error("read_manifest: '" + path + "' missing manifest magic header");
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  Manifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string ev_str, depth_str;
    if (!std::getline(ls, e.scene_id, '\t') || !std::getline(ls, e.crf_name, '\t') ||
        !std::getline(ls, ev_str, '\t') || !std::getline(ls, e.path, '\t') ||
        !std::getline(ls, depth_str))
      throw Error("read_manifest: malformed line " + std::to_string(lineno) + " in '" + path + "'");
    try {
      e.ev = std::stod(ev_str);
      e.bit_depth = std::stoi(depth_str);
    } catch (const std::exception&) {
      throw Error("read_manifest: bad numeric field on line " + std::to_string(lineno) +
                  " in '" + path + "'");
    }
    std::filesystem::path p(e.path);
    if (p.is_relative()) e.path = (base / p).string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

/// Loads one manifest stack group from disk as an ExposureStack.
inline ExposureStack load_stack(const std::vector<ManifestEntry>& entries,
                                const std::string& scene_id) {
  ExposureStack stack;
  stack.scene_id = scene_id;
  for (const auto& e : entries) {
    LdrImage img = read_ldr(e.path);
    img.meta = ExposureMeta::from_ev(e.ev);
    img.crf_name = e.crf_name;
    img.bit_depth = e.bit_depth;
    stack.images.push_back(std::move(img));
  }
  stack.validate();
  return stack;
}

}  // namespace mexhdr
