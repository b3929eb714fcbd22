#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regimesig/error.hpp"
#include "regimesig/frame.hpp"

namespace regimesig::config {

/// Flat `key = value` file. `#` starts a comment; blank lines are skipped.
/// Nested settings share a dotted prefix (`embed.n_neighbors`).
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      require(eq != std::string_view::npos, Errc::ConfigInvalid,
              origin + ":" + std::to_string(no) + ": expected key = value");
      const std::string key(detail::trim(t.substr(0, eq)));
      require(!key.empty(), Errc::ConfigInvalid, origin + ":" + std::to_string(no) + ": empty key");
      require(!kv.values_.contains(key), Errc::ConfigInvalid, key + ": set twice");
      kv.values_[key] = std::string(detail::trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), Errc::ConfigInvalid, "cannot read config file " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string str(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return str(key, ""), fallback;
    const auto v = parse_double(str(key, ""));
    require(v.has_value(), Errc::ConfigInvalid, key + ": not a number");
    return *v;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return str(key, ""), fallback;
    const auto s = str(key, "");
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && p == s.data() + s.size(), Errc::ConfigInvalid, key + ": not a non-negative integer");
    return v;
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return str(key, ""), fallback;
    const auto s = str(key, "");
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc{} && p == s.data() + s.size(), Errc::ConfigInvalid, key + ": not an integer");
    return v;
  }

  std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) return str(key, ""), fallback;
    std::vector<std::string> out;
    const auto raw = str(key, "");
    for (auto part : detail::split_commas(raw))
      if (!detail::trim(part).empty()) out.emplace_back(detail::trim(part));
    return out;
  }

  /// Keys present in the file that no getter asked for; usually typos.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : values_)
      if (!used_.contains(k)) out.push_back(k);
    return out;
  }

  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace regimesig::config
