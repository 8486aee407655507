// SPDX-License-Identifier: Apache-2.0
#pragma once

// Plain-text key/value-with-sections config grammar used for dynamics
// configs, experiment configs and pipeline-stage specs.
//
//   # comment            ; comment
//   [section]            [section.sub]
//   key = value
//
// Keys are unique within a section; section order and key order within a
// section are preserved. Values are trimmed; no quoting or escapes.

#include <charconv>
#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "msft/core.hpp"

namespace msft {

// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) pos = s.size();
    auto item = trim(s.substr(start, pos - start));
    if (!item.empty()) out.push_back(item);
    start = pos + 1;
  }
  return out;
}

inline double parse_real(std::string_view text, std::string_view what) {
  auto t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw ConfigError("invalid number for " + std::string(what) + ": '" + t + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view text, std::string_view what) {
  auto t = trim(text);
  std::int64_t v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
    // Accept integral values written in real notation (e.g. 1e6).
    double d = parse_real(t, what);
    if (d != static_cast<double>(static_cast<std::int64_t>(d)))
      throw ConfigError("invalid integer for " + std::string(what) + ": '" + t + "'");
    return static_cast<std::int64_t>(d);
  }
  return v;
}

inline bool parse_bool(std::string_view text, std::string_view what) {
  auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("invalid boolean for " + std::string(what) + ": '" + t + "'");
}

class ConfigSection {
 public:
  explicit ConfigSection(std::string name = {}) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void set(std::string key, double value) { set(std::move(key), format_real(value)); }
  void set(std::string key, std::int64_t value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, int value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, std::uint64_t value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, bool value) { set(std::move(key), std::string(value ? "true" : "false")); }
  void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }
  bool has(std::string_view key) const { return find(key) != nullptr; }

  const std::string& get(std::string_view key) const {
    if (auto* v = find(key)) return *v;
    throw ConfigError("missing key '" + std::string(key) + "' in [" + name_ + "]");
  }
  std::string get_or(std::string_view key, std::string fallback) const {
    if (auto* v = find(key)) return *v;
    return fallback;
  }
  double real(std::string_view key) const { return parse_real(get(key), key); }
  double real_or(std::string_view key, double fallback) const {
    auto* v = find(key);
    return v ? parse_real(*v, key) : fallback;
  }
  std::int64_t integer(std::string_view key) const { return parse_int(get(key), key); }
  std::int64_t integer_or(std::string_view key, std::int64_t fallback) const {
    auto* v = find(key);
    return v ? parse_int(*v, key) : fallback;
  }
  bool boolean_or(std::string_view key, bool fallback) const {
    auto* v = find(key);
    return v ? parse_bool(*v, key) : fallback;
  }

 private:
  std::string name_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

class ConfigDocument {
 public:
  ConfigSection& section(const std::string& name) {
    for (auto& s : sections_)
      if (s.name() == name) return s;
    sections_.emplace_back(name);
    return sections_.back();
  }

  const ConfigSection* find(std::string_view name) const {
    for (const auto& s : sections_)
      if (s.name() == name) return &s;
    return nullptr;
  }

  const ConfigSection& require(std::string_view name) const {
    if (auto* s = find(name)) return *s;
    throw ConfigError("missing section [" + std::string(name) + "]");
  }

  // Sections whose name starts with "<prefix>." in document order.
  std::vector<const ConfigSection*> with_prefix(std::string_view prefix) const {
    std::vector<const ConfigSection*> out;
    std::string p = std::string(prefix) + ".";
    for (const auto& s : sections_)
      if (s.name().rfind(p, 0) == 0) out.push_back(&s);
    return out;
  }

  const std::vector<ConfigSection>& sections() const { return sections_; }

  std::string to_string() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& s : sections_) {
      if (!first) os << '\n';
      first = false;
      os << '[' << s.name() << "]\n";
      for (const auto& [k, v] : s.entries()) os << k << " = " << v << '\n';
    }
    return os.str();
  }

  static ConfigDocument parse(std::istream& is) {
    ConfigDocument doc;
    ConfigSection* current = nullptr;
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
      ++lineno;
      auto line = trim(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
        auto name = trim(std::string_view(line).substr(1, line.size() - 2));
        if (name.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
        if (doc.find(name)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" + name + "]");
        current = &doc.section(name);
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      if (!current) throw ConfigError("line " + std::to_string(lineno) + ": key outside of any section");
      auto key = trim(std::string_view(line).substr(0, eq));
      auto value = trim(std::string_view(line).substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      if (current->has(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      current->set(key, value);
    }
    return doc;
  }

  static ConfigDocument parse(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

 private:
  std::vector<ConfigSection> sections_;
};

}  // namespace msft
