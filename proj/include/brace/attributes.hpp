#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "brace/config.hpp"
#include "brace/error.hpp"

namespace brace {

/// A named list of words or phrases characterizing a target style.
struct AttributeSet {
  std::string name;
  std::vector<std::string> tokens;

  /// Tokens joined with single spaces: the text that gets encoded.
  std::string joined() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += tokens[i];
    }
    return out;
  }

  friend bool operator==(const AttributeSet&, const AttributeSet&) = default;
};

/// One token or phrase per line; blank lines and '#' lines are skipped.
inline AttributeSet parse_attribute_list(const std::string& name, const std::string& text) {
  AttributeSet set{name, {}};
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    set.tokens.push_back(t);
  }
  if (set.tokens.empty()) throw Error("attribute set '" + name + "' has no tokens");
  return set;
}

/// Loads a word list file; the set is named after the file stem.
inline AttributeSet load_attribute_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open attribute file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_attribute_list(path.stem().string(), ss.str());
}

/// Every `*.txt` in a directory, sorted by name.
inline std::vector<AttributeSet> load_attribute_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("attribute directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<AttributeSet> out;
  for (const auto& f : files) out.push_back(load_attribute_file(f));
  return out;
}

/// Attribute sets embedded in checkpoint metadata as `attribute.<name> = a|b|c`,
/// with their order under `attributes.order`.
inline void write_attribute_sets(KeyValueConfig& kv, const std::vector<AttributeSet>& sets) {
  std::string order;
  for (const auto& s : sets) order += (order.empty() ? "" : "|") + s.name;
  if (!sets.empty()) kv.set("attributes.order", order);
  for (const auto& s : sets) {
    std::string joined;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) joined += (i ? "|" : "") + s.tokens[i];
    kv.set("attribute." + s.name, joined);
  }
}

inline std::vector<AttributeSet> read_attribute_sets(const KeyValueConfig& kv) {
  std::vector<AttributeSet> out;
  const std::string prefix = "attribute.";
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind(prefix, 0) != 0) continue;
    AttributeSet s{k.substr(prefix.size()), {}};
    for (auto& t : detail::split(v, '|'))
      if (!t.empty()) s.tokens.push_back(t);
    out.push_back(std::move(s));
  }
  if (auto order = kv.get("attributes.order")) {
    std::vector<AttributeSet> sorted;
    for (const auto& name : detail::split(*order, '|'))
      for (auto& s : out)
        if (s.name == name) sorted.push_back(s);
    if (sorted.size() != out.size()) throw FormatError("attributes.order does not match the stored sets");
    out = std::move(sorted);
  }
  return out;
}

}  // namespace brace
