#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace calq {

/// Flat `key = value` text; `#` starts a comment, blank lines are ignored.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& source = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

/// 64-bit FNV-1a of the file contents, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Ordered key/value record written beside each artifact as `<artifact>.manifest`.
class Manifest {
 public:
  void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
  void add_input(const std::string& key, const std::filesystem::path& path);
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string str() const;
  void write(const std::filesystem::path& artifact) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace calq
