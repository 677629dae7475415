#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "opreg/errors.hpp"

namespace opreg {

/// Self-describing plain-text record: ordered scalar entries `key = value` and
/// numeric arrays `key [d1 d2 ...] =` followed by the row-major payload, eight
/// numbers per line, printed with 17 significant digits.
class TextDocument {
 public:
  struct Array {
    std::vector<std::size_t> dims;
    std::vector<double> values;
  };

  void set(const std::string& key, std::string value) {
    touch(key);
    scalars_[key] = std::move(value);
  }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, long long value) { set(key, std::to_string(value)); }

  void set_array(const std::string& key, std::vector<std::size_t> dims, std::vector<double> values) {
    std::size_t count = 1;
    for (auto d : dims) count *= d;
    require(count == values.size(), ErrorKind::DimensionMismatch, "array '" + key + "' payload does not match dims");
    touch(key);
    arrays_[key] = Array{std::move(dims), std::move(values)};
  }
  void set_array(const std::string& key, std::vector<double> values) {
    const std::size_t n = values.size();
    set_array(key, {n}, std::move(values));
  }

  bool has(const std::string& key) const { return scalars_.count(key) || arrays_.count(key); }

  const std::string& get(const std::string& key) const {
    auto it = scalars_.find(key);
    if (it == scalars_.end()) fail(ErrorKind::ConfigInvalid, "missing field '" + key + "'");
    return it->second;
  }
  double get_double(const std::string& key) const { return parse_double(get(key), key); }
  long long get_int(const std::string& key) const {
    const std::string& s = get(key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorKind::ConfigInvalid, "field '" + key + "' is not an integer");
    return v;
  }
  std::size_t get_size(const std::string& key) const {
    const long long v = get_int(key);
    require(v >= 0, ErrorKind::ConfigInvalid, "field '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  }
  const Array& get_array(const std::string& key) const {
    auto it = arrays_.find(key);
    if (it == arrays_.end()) fail(ErrorKind::ConfigInvalid, "missing array '" + key + "'");
    return it->second;
  }

  void write(std::ostream& os) const {
    for (const auto& key : order_) {
      if (auto it = scalars_.find(key); it != scalars_.end()) {
        os << key << " = " << it->second << '\n';
        continue;
      }
      const Array& a = arrays_.at(key);
      os << key << " [";
      for (std::size_t i = 0; i < a.dims.size(); ++i) os << (i ? " " : "") << a.dims[i];
      os << "] =";
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        os << ((i % 8 == 0) ? "\n  " : " ") << format_double(a.values[i]);
      }
      os << '\n';
    }
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  static TextDocument read(std::istream& is) {
    TextDocument doc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorKind::ConfigInvalid, "line " + std::to_string(lineno) + ": expected '='");
      std::string lhs = trim(line.substr(0, eq));
      std::string rhs = trim(line.substr(eq + 1));
      const auto br = lhs.find('[');
      if (br == std::string::npos) {
        doc.set(lhs, rhs);
        continue;
      }
      const auto close = lhs.find(']', br);
      if (close == std::string::npos) fail(ErrorKind::ConfigInvalid, "line " + std::to_string(lineno) + ": unclosed '['");
      const std::string key = trim(lhs.substr(0, br));
      std::istringstream ds(lhs.substr(br + 1, close - br - 1));
      std::vector<std::size_t> dims;
      std::size_t count = 1;
      for (std::size_t d; ds >> d;) {
        dims.push_back(d);
        count *= d;
      }
      std::vector<double> values;
      values.reserve(count);
      std::istringstream rs(rhs);
      for (std::string tok; values.size() < count;) {
        if (rs >> tok) {
          values.push_back(parse_double(tok, key));
          continue;
        }
        if (!std::getline(is, line)) fail(ErrorKind::ConfigInvalid, "array '" + key + "' truncated");
        ++lineno;
        rs.clear();
        rs.str(line);
      }
      doc.set_array(key, std::move(dims), std::move(values));
    }
    return doc;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    require(bool(os), ErrorKind::ConfigInvalid, "cannot open '" + path + "' for writing");
    write(os);
  }

  static TextDocument load(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), ErrorKind::ConfigInvalid, "cannot open '" + path + "'");
    return read(is);
  }

  static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  static double parse_double(const std::string& s, const std::string& key) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(ErrorKind::ConfigInvalid, "field '" + key + "': cannot parse '" + s + "' as a number");
    }
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  void touch(const std::string& key) {
    if (!has(key)) order_.push_back(key);
    scalars_.erase(key);
    arrays_.erase(key);
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> scalars_;
  std::map<std::string, Array> arrays_;
};

}  // namespace opreg
