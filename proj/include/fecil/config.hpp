#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fecil/errors.hpp"

namespace fecil {

/// Flat `key = value` text. `[section]` lines prefix the keys that follow
/// with `section.`; `#` starts a comment; values may be double-quoted.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const;

  /// Throws ConfigError naming the line of the first key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

  /// Canonical `key=value` lines sorted by key.
  std::string dump() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace fecil
