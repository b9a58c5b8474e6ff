#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ganglionet/io.hpp"

namespace ganglionet {

/// Ordered `key=value` records. Blank lines and lines starting with '#' are ignored;
/// whitespace around keys and values is trimmed.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      require(eq != std::string::npos && eq > 0, ErrorCode::Config,
              origin + ":" + std::to_string(n) + ": expected key=value, got '" + t + "'");
      const auto key = trim(t.substr(0, eq));
      require(!kv.contains(key), ErrorCode::Config, origin + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
      kv.set(key, trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, str()); }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_)
      if (k == key) {
        v = value;
        return;
      }
    items_.emplace_back(key, value);
  }

  bool contains(const std::string& key) const { return find(key).has_value(); }

  std::optional<std::string> find(const std::string& key) const {
    for (const auto& [k, v] : items_)
      if (k == key) return v;
    return std::nullopt;
  }

  std::string get(const std::string& key) const {
    auto v = find(key);
    require(v.has_value(), ErrorCode::Config, "missing key '" + key + "'");
    return *v;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + "=" + v + "\n";
    return out;
  }

  friend bool operator==(const KeyValues&, const KeyValues&) = default;

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
  }

  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace ganglionet
