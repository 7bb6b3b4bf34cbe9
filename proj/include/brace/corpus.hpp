#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "brace/attributes.hpp"
#include "brace/config.hpp"
#include "brace/error.hpp"
#include "brace/rng.hpp"

namespace brace {

struct StyleItem {
  std::string text;
  std::string label;
  friend bool operator==(const StyleItem&, const StyleItem&) = default;
};

struct StyleCorpus {
  std::vector<StyleItem> items;

  std::vector<std::string> labels() const {
    std::set<std::string> seen;
    for (const auto& it : items) seen.insert(it.label);
    return {seen.begin(), seen.end()};
  }

  std::size_t count(const std::string& label) const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.label == label;
    return n;
  }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    for (const auto& it : items) out.push_back(it.text);
    return out;
  }

  friend bool operator==(const StyleCorpus&, const StyleCorpus&) = default;
};

/// `label<TAB>text` per line.
inline StyleCorpus parse_corpus(const std::string& content) {
  StyleCorpus c;
  std::istringstream is(content);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(detail::concat("corpus line ", lineno, ": expected label<TAB>text"));
    }
    c.items.push_back({line.substr(tab + 1), line.substr(0, tab)});
  }
  if (c.items.empty()) throw FormatError("corpus is empty");
  return c;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline StyleCorpus load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_text_file(path));
}

inline std::string format_corpus(const StyleCorpus& c) {
  std::string out;
  for (const auto& it : c.items) out += it.label + "\t" + it.text + "\n";
  return out;
}

/// One StyleDataset row: a sentence and the attribute words describing it.
struct StyleDatasetItem {
  std::string sentence;
  std::vector<std::string> attributes;
};

/// `sentence<TAB>attr1, attr2, ...` per line.
inline std::vector<StyleDatasetItem> parse_style_dataset(const std::string& content) {
  std::vector<StyleDatasetItem> out;
  std::istringstream is(content);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(detail::concat("style dataset line ", lineno,
                                       ": expected sentence<TAB>attributes"));
    }
    StyleDatasetItem item{line.substr(0, tab), {}};
    for (auto& a : detail::split(line.substr(tab + 1), ',')) {
      auto t = detail::trim(a);
      if (!t.empty()) item.attributes.push_back(t);
    }
    if (item.attributes.empty()) {
      throw FormatError(detail::concat("style dataset line ", lineno, ": no attribute words"));
    }
    out.push_back(std::move(item));
  }
  return out;
}

// Marker words for the synthetic corpus, drawn from the shipped
// positive/negative sentiment lists.
inline const std::vector<std::string>& default_positive_markers() {
  static const std::vector<std::string> v = {"amazing", "brilliant", "delightful", "fantastic",
                                             "wonderful", "superb", "terrific", "splendid"};
  return v;
}
inline const std::vector<std::string>& default_negative_markers() {
  static const std::vector<std::string> v = {"awful", "horrible", "terrible", "dismal",
                                             "pathetic", "lousy", "wretched", "vile"};
  return v;
}
inline const std::vector<std::string>& default_neutral_words() {
  static const std::vector<std::string> v = {"ordinary", "plain", "long", "short",
                                             "quiet", "simple", "common", "usual"};
  return v;
}

struct SyntheticCorpusOptions {
  std::vector<std::string> positive_markers = default_positive_markers();
  std::vector<std::string> negative_markers = default_negative_markers();
  std::string positive_label = "positive";
  std::string negative_label = "negative";
};

namespace detail {

inline const std::vector<std::string>& corpus_nouns() {
  static const std::vector<std::string> v = {"movie", "film", "show", "story", "plot", "book",
                                             "meal",  "song", "trip", "game",  "play", "visit"};
  return v;
}

inline const std::vector<std::string>& corpus_templates() {
  // {a}/{b}: adjective slots, {n}/{m}: noun slots.
  static const std::vector<std::string> v = {
      "the {n} was {a} and the {m} was {b} .",
      "what a {a} {n} , the {m} felt {b} .",
      "i found the {n} {a} , and the {m} {b} .",
      "a {a} {n} with a {b} {m} .",
      "my {n} today was {a} , truly {b} .",
      "the {n} is {a} , the {m} is {b} ."};
  return v;
}

template <typename Pick>
std::string fill_template(const std::string& tpl, Rng& rng, Pick&& adjective) {
  const auto& nouns = corpus_nouns();
  std::string out;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '{' && i + 2 < tpl.size() && tpl[i + 2] == '}') {
      const char slot = tpl[i + 1];
      if (slot == 'n' || slot == 'm') out += nouns[rng.uniform_int(nouns.size())];
      else out += adjective();
      i += 2;
    } else {
      out.push_back(tpl[i]);
    }
  }
  return out;
}

}  // namespace detail

/// Balanced two-style templated corpus; every adjective slot in a sentence is
/// a marker of that sentence's style. Items alternate positive / negative.
inline StyleCorpus build_synthetic_style_corpus(std::uint64_t seed, std::size_t n_items,
                                                const SyntheticCorpusOptions& opt = {}) {
  if (n_items < 2) throw Error("synthetic corpus needs at least 2 items");
  if (n_items % 2 != 0) throw Error("synthetic corpus size must be even (balanced styles)");
  Rng rng(seed);
  const auto& tpls = detail::corpus_templates();
  StyleCorpus c;
  for (std::size_t i = 0; i < n_items; ++i) {
    const bool pos = i % 2 == 0;
    const auto& markers = pos ? opt.positive_markers : opt.negative_markers;
    const auto& tpl = tpls[rng.uniform_int(tpls.size())];
    std::string text = detail::fill_template(
        tpl, rng, [&] { return markers[rng.uniform_int(markers.size())]; });
    c.items.push_back({std::move(text), pos ? opt.positive_label : opt.negative_label});
  }
  return c;
}

/// Text on the same templates for pretraining the toy backbone before it is
/// frozen. Adjective slots are neutral words, except that with probability
/// `marker_rate` a slot takes a marker of a random style, independently per
/// slot, so the backbone knows the words but not the styles.
inline StyleCorpus build_synthetic_base_corpus(std::uint64_t seed, std::size_t n_items,
                                               double marker_rate = 0.0,
                                               const SyntheticCorpusOptions& opt = {}) {
  if (!(marker_rate >= 0.0 && marker_rate <= 1.0)) throw Error("marker_rate must be in [0, 1]");
  Rng rng(seed);
  const auto& tpls = detail::corpus_templates();
  const auto& words = default_neutral_words();
  auto pick = [&]() -> const std::string& {
    if (marker_rate > 0.0 && rng.uniform() < marker_rate) {
      const auto& m = rng.uniform() < 0.5 ? opt.positive_markers : opt.negative_markers;
      return m[rng.uniform_int(m.size())];
    }
    return words[rng.uniform_int(words.size())];
  };
  StyleCorpus c;
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto& tpl = tpls[rng.uniform_int(tpls.size())];
    c.items.push_back({detail::fill_template(tpl, rng, pick), "neutral"});
  }
  return c;
}

/// Deterministic split: every k-th item (k = round(1/fraction)) goes to validation.
inline std::pair<StyleCorpus, StyleCorpus> split_corpus(const StyleCorpus& c, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split fraction must be in (0, 1)");
  const auto every = static_cast<std::size_t>(std::max(2.0, std::round(1.0 / fraction)));
  StyleCorpus train, val;
  for (std::size_t i = 0; i < c.items.size(); ++i) {
    ((i / 2) % every == every - 1 ? val : train).items.push_back(c.items[i]);
  }
  return {train, val};
}

/// Sorted distinct whitespace-separated words over all texts.
inline std::vector<std::string> word_vocabulary(const std::vector<std::vector<std::string>>& text_lists) {
  std::set<std::string> words;
  for (const auto& texts : text_lists)
    for (const auto& t : texts) {
      std::istringstream is(t);
      std::string w;
      while (is >> w) words.insert(w);
    }
  return {words.begin(), words.end()};
}

/// Whole-word occurrences of any of `markers` in `text`.
inline std::size_t count_markers(const std::string& text, const std::vector<std::string>& markers) {
  std::set<std::string> m(markers.begin(), markers.end());
  std::istringstream is(text);
  std::string w;
  std::size_t n = 0;
  while (is >> w) n += m.count(w);
  return n;
}

}  // namespace brace
