#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "brace/config.hpp"
#include "brace/error.hpp"

namespace brace {

enum class TokenizerMode { byte, character, word_list };

inline std::string to_string(TokenizerMode m) {
  switch (m) {
    case TokenizerMode::byte: return "byte";
    case TokenizerMode::character: return "char";
    case TokenizerMode::word_list: return "word-list";
  }
  return "?";
}

inline TokenizerMode parse_tokenizer_mode(const std::string& s) {
  if (s == "byte") return TokenizerMode::byte;
  if (s == "char") return TokenizerMode::character;
  if (s == "word-list") return TokenizerMode::word_list;
  throw ConfigError("unknown tokenizer mode: " + s);
}

/// Byte, character (printable ASCII plus tab/newline) or whitespace
/// word-list tokenization. Specials follow the regular symbols:
/// bos, eos, pad (and unk for word lists).
class Tokenizer {
 public:
  static Tokenizer bytes() { return Tokenizer(TokenizerMode::byte, {}); }
  static Tokenizer chars() { return Tokenizer(TokenizerMode::character, {}); }
  static Tokenizer words(std::vector<std::string> vocab) {
    return Tokenizer(TokenizerMode::word_list, std::move(vocab));
  }

  TokenizerMode mode() const { return mode_; }
  std::size_t vocab_size() const { return symbols_ + specials(); }
  int bos() const { return static_cast<int>(symbols_); }
  int eos() const { return static_cast<int>(symbols_ + 1); }
  int pad() const { return static_cast<int>(symbols_ + 2); }
  int unk() const {
    if (mode_ != TokenizerMode::word_list) throw Error("unk only exists for word-list mode");
    return static_cast<int>(symbols_ + 3);
  }
  bool is_special(int id) const {
    return id >= static_cast<int>(symbols_);
  }
  const std::vector<std::string>& word_vocab() const { return words_; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    switch (mode_) {
      case TokenizerMode::byte:
        for (unsigned char c : text) out.push_back(c);
        break;
      case TokenizerMode::character:
        for (std::size_t i = 0; i < text.size(); ++i) {
          const int id = char_id(static_cast<unsigned char>(text[i]));
          if (id < 0) {
            throw Error(detail::concat("character 0x", std::hex,
                                       static_cast<int>(static_cast<unsigned char>(text[i])),
                                       std::dec, " at offset ", i,
                                       " is not in the char vocabulary"));
          }
          out.push_back(id);
        }
        break;
      case TokenizerMode::word_list: {
        std::istringstream is(text);
        std::string w;
        while (is >> w) {
          auto it = word_index_.find(w);
          out.push_back(it == word_index_.end() ? unk() : it->second);
        }
        break;
      }
    }
    return out;
  }

  /// Decodes regular symbols; specials are skipped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    bool first = true;
    for (int id : ids) {
      if (id < 0 || is_special(id)) continue;
      switch (mode_) {
        case TokenizerMode::byte: out.push_back(static_cast<char>(id)); break;
        case TokenizerMode::character: out.push_back(id_char(id)); break;
        case TokenizerMode::word_list:
          if (!first) out.push_back(' ');
          out += words_[static_cast<std::size_t>(id)];
          first = false;
          break;
      }
    }
    return out;
  }

  void write(KeyValueConfig& kv) const {
    kv.set("tokenizer.mode", to_string(mode_));
    if (mode_ == TokenizerMode::word_list) {
      std::string joined;
      for (std::size_t i = 0; i < words_.size(); ++i) {
        if (i) joined += ' ';
        joined += words_[i];
      }
      kv.set("tokenizer.words", joined);
    }
  }

  static Tokenizer read(const KeyValueConfig& kv) {
    const auto mode = parse_tokenizer_mode(kv.get_string("tokenizer.mode", "char"));
    if (mode == TokenizerMode::byte) return bytes();
    if (mode == TokenizerMode::character) return chars();
    std::vector<std::string> vocab;
    std::istringstream is(kv.get_string("tokenizer.words", ""));
    std::string w;
    while (is >> w) vocab.push_back(w);
    return words(std::move(vocab));
  }

 private:
  Tokenizer(TokenizerMode mode, std::vector<std::string> vocab)
      : mode_(mode), words_(std::move(vocab)) {
    switch (mode_) {
      case TokenizerMode::byte: symbols_ = 256; break;
      case TokenizerMode::character: symbols_ = 97; break;
      case TokenizerMode::word_list:
        symbols_ = words_.size();
        for (std::size_t i = 0; i < words_.size(); ++i) {
          if (!word_index_.emplace(words_[i], static_cast<int>(i)).second) {
            throw ConfigError("duplicate word in vocabulary: " + words_[i]);
          }
        }
        break;
    }
  }

  std::size_t specials() const { return mode_ == TokenizerMode::word_list ? 4 : 3; }

  // 0 = '\t', 1 = '\n', 2.. = ' '..'~'
  static int char_id(unsigned char c) {
    if (c == '\t') return 0;
    if (c == '\n') return 1;
    if (c >= 32 && c <= 126) return 2 + (c - 32);
    return -1;
  }
  static char id_char(int id) {
    if (id == 0) return '\t';
    if (id == 1) return '\n';
    return static_cast<char>(32 + id - 2);
  }

  TokenizerMode mode_;
  std::vector<std::string> words_;
  std::map<std::string, int> word_index_;
  std::size_t symbols_ = 0;
};

}  // namespace brace
