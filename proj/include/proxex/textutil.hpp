#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace proxex {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Strips leading/trailing punctuation, keeps inner characters ("it's", "B.").
inline std::string strip_punct(std::string_view token) {
  std::size_t b = 0, e = token.size();
  auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
  while (b < e && is_punct(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && is_punct(static_cast<unsigned char>(token[e - 1]))) --e;
  return std::string(token.substr(b, e - b));
}

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    const std::size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    out.emplace_back(text.substr(b, i - b));
  }
  return out;
}

// Lowercased, punctuation-stripped word set of a text.
inline std::set<std::string> word_set(std::string_view text) {
  std::set<std::string> words;
  for (const auto& t : whitespace_tokens(text)) {
    std::string w = strip_punct(to_lower(t));
    if (!w.empty()) words.insert(std::move(w));
  }
  return words;
}

inline long approx_token_count(std::string_view text) {
  return static_cast<long>(whitespace_tokens(text).size());
}

}  // namespace proxex
