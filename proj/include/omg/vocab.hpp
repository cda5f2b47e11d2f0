#pragma once

// Closed vocabulary of the synthetic shape language plus special tokens.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "omg/error.hpp"

namespace omg::lm {

inline const std::vector<std::string>& default_text_tokens() {
  static const std::vector<std::string> words = {
      // attributes
      "red", "green", "blue", "yellow", "purple", "cyan",
      "circle", "square", "triangle", "diamond", "circles", "squares", "triangles", "diamonds",
      "small", "large", "top", "bottom", "left", "right", "center",
      "zero", "one", "two", "three", "four", "five",
      // template glue
      "please", "segment", "in", "this", "image", ".", "the", "a", "describe", "briefly", "there", "is",
      ",", "and", "at", "could", "you", "give", "me", "detailed", "description", "of", "?", "respond",
      "with", "interleaved", "segmentation", "masks", "for", "corresponding", "parts", "answer", "what",
      "color", "it", "how", "many", "objects", "are", "can", "detail", "all"};
  return words;
}

class Vocab {
 public:
  static constexpr const char* kImage = "<Image>";
  static constexpr const char* kRegion = "<Region>";
  static constexpr const char* kSeg = "[SEG]";
  static constexpr const char* kPOpen = "<p>";
  static constexpr const char* kPClose = "</p>";
  static constexpr const char* kBos = "<bos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kPad = "<pad>";

  Vocab() : Vocab(default_text_tokens()) {}

  explicit Vocab(std::vector<std::string> text) : tokens_(std::move(text)) {
    text_count_ = static_cast<int>(tokens_.size());
    for (const char* s : {kImage, kRegion, kSeg, kPOpen, kPClose, kBos, kEos, kPad}) tokens_.emplace_back(s);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw ConfigError("vocab: duplicate token '" + tokens_[i] + "'");
    }
    image = id(kImage), region = id(kRegion), seg = id(kSeg), p_open = id(kPOpen), p_close = id(kPClose);
    bos = id(kBos), eos = id(kEos), pad = id(kPad);
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int text_count() const { return text_count_; }
  bool is_special(int t) const { return t >= text_count_; }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ParseError("vocab: unknown token '" + tok + "'");
    return it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  // Lowercases plain words, splits trailing punctuation, keeps special tokens
  // verbatim.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
      if (contains(w)) {
        out.push_back(id(w));
        continue;
      }
      std::string tail;
      while (!w.empty() && (w.back() == '.' || w.back() == ',' || w.back() == '?')) {
        tail.insert(tail.begin(), w.back());
        w.pop_back();
      }
      if (!w.empty()) {
        if (!contains(w)) std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
        out.push_back(id(w));
      }
      for (char c : tail) out.push_back(id(std::string(1, c)));
    }
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int t : ids) {
      if (!s.empty()) s += ' ';
      s += token(t);
    }
    return s;
  }

  // One token per line; specials carry an '@' prefix.
  std::string serialize() const {
    std::string out;
    for (int i = 0; i < size(); ++i) out += (is_special(i) ? "@" : "") + tokens_[i] + "\n";
    return out;
  }

  static Vocab parse(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    bool specials = false;
    while (std::getline(is, line)) {
      ++n;
      if (line.empty()) continue;
      if (line[0] == '@') {
        specials = true;
        continue;
      }
      if (specials) throw ParseError("vocab: text token after specials", n);
      words.push_back(line);
    }
    Vocab v(std::move(words));
    if (v.serialize() != text) throw ParseError("vocab: special token block does not match this build");
    return v;
  }

  int image = 0, region = 0, seg = 0, p_open = 0, p_close = 0, bos = 0, eos = 0, pad = 0;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int text_count_ = 0;
};

}  // namespace omg::lm
