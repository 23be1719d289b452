#include "mcmdpo/text.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

namespace mcmdpo {

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> tokens;
  const std::string person = kPersonToken;
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (text.compare(i, person.size(), person) == 0) {
      tokens.push_back(person);
      i += person.size();
      continue;
    }
    if (std::isalnum(c)) {
      size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                                 text[j] == '\'')) {
        ++j;
      }
      tokens.push_back(lowercase(text.substr(i, j - i)));
      i = j;
      continue;
    }
    // Punctuation and any other byte becomes its own token.
    tokens.push_back(std::string(1, text[i]));
    ++i;
  }
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

bool is_stopword(const std::string& t) {
  static const std::unordered_set<std::string> kStopwords = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",   "for",
      "from", "has",  "he",   "her",  "his",  "i",    "in",   "is",   "it",
      "its",  "of",   "on",   "or",   "she",  "that", "the",  "they", "this",
      "to",   "was",  "we",   "were", "with", "you",  "there"};
  return kStopwords.count(t) != 0;
}

void count_codepoints(const std::string& s, size_t* total, size_t* ascii) {
  size_t t = 0, a = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) == 0x80) continue;  // UTF-8 continuation byte
    ++t;
    if (c < 0x80) ++a;
  }
  *total = t;
  *ascii = a;
}

}  // namespace mcmdpo
