#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace isample {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text with `#` comments. Lookups mark keys as used so
/// callers can reject anything left over (typos are hard errors).
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValues read(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);

  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key) const;
  double real(const std::string& key, double fallback) const;
  long long integer(const std::string& key) const;
  long long integer(const std::string& key, long long fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

  /// Entries under `prefix` with the prefix stripped. Marks them used here.
  KeyValues section(const std::string& prefix) const;

  /// Throws ConfigError naming every key that was never read.
  void reject_unused() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  /// One `key=value` line per entry, sorted by key.
  std::string text() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
  mutable std::set<std::string> used_;
};

std::vector<std::string> split(const std::string& s, char delim);
std::string trim(const std::string& s);
/// Shortest text that parses back to the same double.
std::string format_real(double v);

template <typename T>
std::string join(const std::vector<T>& values, const char* sep = ",");

}  // namespace isample
