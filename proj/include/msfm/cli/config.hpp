#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msfm/numerics/error.hpp"

namespace msfm::cli {

// Flat `section.key = value` configuration. Every key has a default; reading
// or setting an unknown key raises ConfigError.
class RunConfig {
 public:
  void define(const std::string& key, std::string value, std::string help) { entries_[key] = {std::move(value), std::move(help)}; }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.value = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.value;
  }

  double real(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": '" + s + "' is not a number");
    return v;
  }

  std::uint64_t count(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || s[0] == '-' || errno == ERANGE) throw ConfigError(key + ": '" + s + "' is not a non-negative integer");
    return v;
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
      if (item.empty() || *end != '\0' || item[0] == '-') throw ConfigError(key + ": '" + str(key) + "' is not a comma-separated list of integers");
      out.push_back(v);
    }
    return out;
  }

  // Lines "key = value"; blank lines and '#' comments ignored.
  std::string dump() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
  }

  std::string help() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += "  " + k + " = " + e.value + "\n      " + e.help + "\n";
    return out;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    f << "# resolved configuration\n" << dump();
    if (!f) throw DataError("cannot write " + path.string());
  }

 private:
  struct Entry {
    std::string value, help;
  };
  std::map<std::string, Entry> entries_;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// "key=value" or "key = value" -> pair; anything else is a ConfigError.
inline std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + text + "'");
  std::pair<std::string, std::string> kv{trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
  if (kv.first.empty()) throw ConfigError(where + ": empty key in '" + text + "'");
  return kv;
}

inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(f, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    out.push_back(split_assignment(t, path.string() + ":" + std::to_string(n)));
  }
  return out;
}

}  // namespace msfm::cli
