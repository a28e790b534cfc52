#pragma once

#include <cctype>
#include <string_view>
#include <vector>

#include "proptk/corpus.hpp"

namespace proptk {

namespace detail {
inline bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }
}  // namespace detail

// Whitespace split, then leading/trailing ASCII punctuation peeled off as
// one-character tokens. Interior punctuation (hyphens, apostrophes) stays in
// the word. Ranges are absolute article offsets.
inline std::vector<Token> tokenize(std::string_view sentence_text,
                                   std::size_t sentence_begin = 0) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  const std::size_t n = sentence_text.size();
  auto emit = [&](std::size_t b, std::size_t e) {
    tokens.push_back({std::string(sentence_text.substr(b, e - b)),
                      {sentence_begin + b, sentence_begin + e}});
  };
  while (i < n) {
    while (i < n && is_ascii_space(static_cast<unsigned char>(sentence_text[i]))) ++i;
    if (i >= n) break;
    std::size_t chunk_end = i;
    while (chunk_end < n && !is_ascii_space(static_cast<unsigned char>(sentence_text[chunk_end])))
      ++chunk_end;

    std::size_t l = i;
    while (l < chunk_end && detail::is_ascii_punct(static_cast<unsigned char>(sentence_text[l]))) {
      emit(l, l + 1);
      ++l;
    }
    std::size_t r = chunk_end;
    std::vector<std::size_t> trailing;
    while (r > l && detail::is_ascii_punct(static_cast<unsigned char>(sentence_text[r - 1]))) {
      trailing.push_back(r - 1);
      --r;
    }
    if (l < r) emit(l, r);
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) emit(*it, *it + 1);
    i = chunk_end;
  }
  return tokens;
}

}  // namespace proptk
