#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace oaif {

/// Token id type. Ids are small non-negative integers; the highest id
/// (size - 1) is always the end-of-sequence marker.
using TokenId = int;

class Vocab {
 public:
  explicit Vocab(int size) : size_(size) {
    if (size < 2 || size > 256) {
      throw std::invalid_argument("Vocab: size must be in [2, 256]");
    }
  }

  int size() const { return size_; }
  TokenId eos() const { return size_ - 1; }

  bool contains(TokenId id) const { return id >= 0 && id < size_; }

  /// Printable glyph for a token id. The EOS token renders as '$'.
  char glyph(TokenId id) const {
    check(id);
    if (id == eos()) return '$';
    static const char kGlyphs[] =
        "abcdefghijklmnopqrstuvwxyz"
        "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
        "0123456789"
        "!#%&'()*+,-./:;<=>?@[]^_`{|}~";
    constexpr int kGlyphCount = sizeof(kGlyphs) - 1;
    return kGlyphs[id % kGlyphCount];
  }

  TokenId id_of(char glyph_char) const {
    for (TokenId id = 0; id < size_; ++id) {
      if (glyph(id) == glyph_char) return id;
    }
    throw std::invalid_argument("Vocab: unknown glyph");
  }

  void check(TokenId id) const {
    if (!contains(id)) {
      throw std::invalid_argument("Vocab: token id " + std::to_string(id) +
                                  " out of range for vocab of size " +
                                  std::to_string(size_));
    }
  }

 private:
  int size_;
};

enum class SeqRole { kPrompt, kResponse };

/// A bounded sequence of token ids. Responses include the trailing EOS
/// token when they terminated naturally; truncated responses do not.
struct TokenSeq {
  std::vector<TokenId> ids;
  SeqRole role = SeqRole::kPrompt;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  /// Number of content tokens, i.e. excluding a trailing EOS.
  std::size_t content_length(const Vocab& vocab) const {
    if (!ids.empty() && ids.back() == vocab.eos()) return ids.size() - 1;
    return ids.size();
  }

  bool terminated(const Vocab& vocab) const {
    return !ids.empty() && ids.back() == vocab.eos();
  }

  void validate(const Vocab& vocab) const {
    for (TokenId id : ids) vocab.check(id);
  }

  std::string render(const Vocab& vocab) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) out.push_back(vocab.glyph(id));
    return out;
  }

  friend bool operator==(const TokenSeq& a, const TokenSeq& b) {
    return a.ids == b.ids;
  }
  friend bool operator!=(const TokenSeq& a, const TokenSeq& b) {
    return !(a == b);
  }
};

inline TokenSeq make_prompt(std::vector<TokenId> ids) {
  return TokenSeq{std::move(ids), SeqRole::kPrompt};
}

inline TokenSeq make_response(std::vector<TokenId> ids) {
  return TokenSeq{std::move(ids), SeqRole::kResponse};
}

}  // namespace oaif
