#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mexhdr/image.hpp"

namespace mexhdr {

/// Line-oriented `key = value` configuration. '#' starts a comment. Every
/// key must be consumed by the reader; leftovers are rejected so typos
/// cannot silently fall back to defaults.
class KvConfig {
public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text, const std::string& origin = "<string>") {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw Error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
      if (cfg.values_.count(key))
        throw Error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing data");
      return v;
    } catch (const std::exception&) {
      throw Error(origin_ + ": key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  long get_int(const std::string& key, long fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing data");
      return v;
    } catch (const std::exception&) {
      throw Error(origin_ + ": key '" + key + "': expected an integer, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw Error(origin_ + ": key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  /// Comma-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(trim(item)));
      } catch (const std::exception&) {
        throw Error(origin_ + ": key '" + key + "': expected comma-separated numbers");
      }
    }
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) {
    auto it = values_.find(key);
    consumed_.insert(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  /// Rejects any key no reader asked for.
  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key))
        throw Error(origin_ + ": unknown key '" + key + "'");
  }

private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::string origin_ = "<none>";
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace mexhdr
