#include "isample/keyvalue.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace isample {

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, delim)) out.push_back(trim(item));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& values, const char* sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) {
    os << (i ? sep : "");
    if constexpr (std::is_floating_point_v<T>)
      os << format_real(values[i]);
    else
      os << values[i];
  }
  return os.str();
}

template std::string join<int>(const std::vector<int>&, const char*);
template std::string join<double>(const std::vector<double>&, const char*);
template std::string join<float>(const std::vector<float>&, const char*);
template std::string join<std::string>(const std::vector<std::string>&, const char*);

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValues::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string KeyValues::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
  used_.insert(key);
  return it->second;
}

std::string KeyValues::str(const std::string& key, const std::string& fallback) const {
  return has(key) ? str(key) : fallback;
}

namespace {

template <typename V>
V parse_number(const std::string& text, const std::string& key) {
  V value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return value;
}

}  // namespace

double KeyValues::real(const std::string& key) const {
  return parse_number<double>(str(key), key);
}

double KeyValues::real(const std::string& key, double fallback) const {
  return has(key) ? real(key) : fallback;
}

long long KeyValues::integer(const std::string& key) const {
  return parse_number<long long>(str(key), key);
}

long long KeyValues::integer(const std::string& key, long long fallback) const {
  return has(key) ? integer(key) : fallback;
}

bool KeyValues::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  auto v = str(key);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int> KeyValues::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split(str(key), ',')) out.push_back(parse_number<int>(item, key));
  return out;
}

std::vector<double> KeyValues::real_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split(str(key), ',')) out.push_back(parse_number<double>(item, key));
  return out;
}

std::string KeyValues::text() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

KeyValues KeyValues::section(const std::string& prefix) const {
  KeyValues out;
  out.origin_ = origin_;
  for (const auto& [key, value] : values_)
    if (key.rfind(prefix, 0) == 0) {
      used_.insert(key);
      out.values_[key.substr(prefix.size())] = value;
    }
  return out;
}

void KeyValues::reject_unused() const {
  std::string unknown;
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown key(s): " + unknown);
}

}  // namespace isample
