#pragma once

#include <string>
#include <vector>

namespace mcmdpo {

inline constexpr const char* kPersonToken = "[person]";

std::string lowercase(const std::string& s);

// Lowercased word tokens with punctuation split off into single-character
// tokens. "[person]" survives as one token. Never yields empty tokens.
std::vector<std::string> tokenize_words(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

// Small built-in English function-word list (shared by the language filter
// and by the synthetic response corruption).
bool is_stopword(const std::string& lowercase_token);

// Count of UTF-8 codepoints and of those that are ASCII.
void count_codepoints(const std::string& s, size_t* total, size_t* ascii);

}  // namespace mcmdpo
