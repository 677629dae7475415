#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "opreg/errors.hpp"

namespace opreg {

/// Plain-text study configuration:
///
///   # comment
///   [section]
///   key = value          (looked up as "section.key")
///
/// Keys before the first section header live in the unnamed section and are
/// looked up by their bare name. Values run to the end of the line, minus any
/// trailing comment; list values are whitespace separated.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& origin = "<config>") {
    ConfigFile cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        require(line.back() == ']' && line.size() > 2, ErrorKind::ConfigInvalid, where + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::ConfigInvalid, where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      require(!key.empty(), ErrorKind::ConfigInvalid, where + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      require(!cfg.values_.count(full), ErrorKind::ConfigInvalid, where + ": duplicate key " + full);
      cfg.values_[full] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static ConfigFile parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::ConfigInvalid, "cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), ErrorKind::ConfigInvalid, "missing config key " + key);
    used_[key] = true;
    return it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) const { return has(key) ? get(key) : fallback; }

  double get_double(const std::string& key) const { return to_double(key, get(key)); }
  double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

  long long get_int(const std::string& key) const { return to_int(key, get(key)); }
  long long get_int(const std::string& key, long long fallback) const { return has(key) ? get_int(key) : fallback; }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const long long v = get_int(key);
    require(v >= 0, ErrorKind::ConfigInvalid, key + " must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  std::vector<double> get_list(const std::string& key) const {
    std::istringstream in(get(key));
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(to_double(key, tok));
    return out;
  }

  /// Keys that were present but never read; typos in configs show up here.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && p == s.data() + s.size(), ErrorKind::ConfigInvalid,
            "config key " + key + ": not a number: '" + s + "'");
    return v;
  }

  static long long to_int(const std::string& key, const std::string& s) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && p == s.data() + s.size(), ErrorKind::ConfigInvalid,
            "config key " + key + ": not an integer: '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

}  // namespace opreg
