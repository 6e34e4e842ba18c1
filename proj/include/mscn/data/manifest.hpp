#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mscn/core/error.hpp"

namespace mscn {

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::size_t label = 0;
  std::string split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;

  std::size_t num_classes() const { return classes.size(); }

  std::vector<ManifestEntry> split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == tag) out.push_back(e);
    return out;
  }
};

/// Every problem found, one message per line item. Empty means valid.
inline std::vector<std::string> validate_manifest(const DatasetManifest& m) {
  std::vector<std::string> errors;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string where = "entry " + std::to_string(i) + " (" + e.path + ")";
    if (e.path.empty()) errors.push_back(where + ": empty path");
    if (e.label >= m.classes.size())
      errors.push_back(where + ": label " + std::to_string(e.label) + " outside [0, " +
                       std::to_string(m.classes.size()) + ")");
    if (e.split.empty()) errors.push_back(where + ": empty split tag");
    if (!seen.insert(e.path).second) errors.push_back(where + ": duplicate path");
  }
  std::set<std::string> names(m.classes.begin(), m.classes.end());
  if (names.size() != m.classes.size()) errors.push_back("duplicate class names");
  return errors;
}

namespace detail {

inline void throw_if_invalid(const DatasetManifest& m, const std::string& source) {
  const auto errors = validate_manifest(m);
  if (errors.empty()) return;
  std::ostringstream os;
  os << "invalid manifest " << source << " (" << errors.size() << " problem"
     << (errors.size() == 1 ? "" : "s") << "):";
  for (const auto& e : errors) os << "\n  - " << e;
  throw ConfigError(os.str());
}

}  // namespace detail

/// Canonical text form: entries sorted by path, 2-space indented, trailing newline.
inline std::string manifest_to_string(DatasetManifest m) {
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  nlohmann::ordered_json j;
  j["version"] = kManifestVersion;
  j["classes"] = m.classes;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json o;
    o["path"] = e.path;
    o["label"] = e.label;
    o["split"] = e.split;
    j["entries"].push_back(std::move(o));
  }
  return j.dump(2) + "\n";
}

inline DatasetManifest parse_manifest(const std::string& text, const std::string& source = "<text>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + source + " is not valid JSON: " + e.what());
  }
  std::vector<std::string> errors;
  if (!j.is_object()) throw ConfigError("manifest " + source + " must be a JSON object");
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kManifestVersion)
    throw ConfigError("manifest " + source + ": unsupported or missing version (expected " +
                      std::to_string(kManifestVersion) + ")");
  for (const auto& [k, v] : j.items())
    if (k != "version" && k != "classes" && k != "entries")
      errors.push_back("unknown key '" + k + "'");
  DatasetManifest m;
  if (!j.contains("classes") || !j["classes"].is_array()) {
    errors.push_back("'classes' must be an array of strings");
  } else {
    for (const auto& c : j["classes"]) {
      if (c.is_string()) {
        m.classes.push_back(c.get<std::string>());
      } else {
        errors.push_back("class names must be strings");
      }
    }
  }
  if (!j.contains("entries") || !j["entries"].is_array()) {
    errors.push_back("'entries' must be an array");
  } else {
    std::size_t i = 0;
    for (const auto& e : j["entries"]) {
      const std::string where = "entry " + std::to_string(i++);
      if (!e.is_object() || !e.contains("path") || !e["path"].is_string() ||
          !e.contains("label") || !e["label"].is_number_integer() || !e.contains("split") ||
          !e["split"].is_string() || e.size() != 3) {
        errors.push_back(where + ": expected exactly {path: string, label: int, split: string}");
        continue;
      }
      const auto label = e["label"].get<long long>();
      if (label < 0) {
        errors.push_back(where + ": negative label");
        continue;
      }
      m.entries.push_back(
          {e["path"].get<std::string>(), static_cast<std::size_t>(label), e["split"].get<std::string>()});
    }
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid manifest " << source << ":";
    for (const auto& e : errors) os << "\n  - " << e;
    throw ConfigError(os.str());
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  detail::throw_if_invalid(m, source);
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("manifest not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  DatasetManifest m = parse_manifest(ss.str(), path.string());
  m.root = path.parent_path();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  detail::throw_if_invalid(m, path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_to_string(m);
  if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace mscn
