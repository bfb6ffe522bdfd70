#pragma once

// Flat key=value text configuration ("#" starts a comment, SI units).

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdot {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line);
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  double number(const std::string& key) const;
  double number_or(const std::string& key, double fallback) const;
  /// Line where `key` was defined, 0 when absent.
  int line_of(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);

  /// Keys that were never read through number()/get(); used to report typos.
  std::vector<std::string> unused_keys() const;

  /// Canonical text form: sorted keys, round-trip precision.
  std::string to_text() const;

  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::map<std::string, int> lines_;
  mutable std::map<std::string, bool> used_;
};

/// Round-trip decimal form of a double.
std::string format_double(double value);

/// FNV-1a over the canonical text, as 16 hex digits.
std::string config_hash(const std::string& canonical_text);

}  // namespace qdot
