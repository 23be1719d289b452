#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mcmdpo {

// Fixed special-token slots, present in every vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kPersonId = 3;
inline constexpr int kNumSpecials = 4;

struct VocabConfig {
  int vocab_size = 64;
  int max_seq_len = 96;
  int pad_id = kPadId;
  int bos_id = kBosId;
  int eos_id = kEosId;
  int person_id = kPersonId;
  void validate() const;  // vocab_size >= 8, specials distinct and in range
  bool operator==(const VocabConfig&) const = default;
};

enum class Role { prompt, context, response };
const char* role_name(Role role);

struct TokenSeq {
  std::vector<int> ids;
  Role role = Role::prompt;

  bool empty() const { return ids.empty(); }
  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const TokenSeq&) const = default;
};

TokenSeq empty_context();

// Whitespace/punctuation tokenizer over a fixed token list built from a
// corpus. Token ids are list positions; specials occupy slots 0..3.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(std::span<const std::string> texts, int max_seq_len = 96);
  static Vocabulary from_tokens(std::vector<std::string> tokens, int max_seq_len);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int max_seq_len() const { return max_seq_len_; }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int id(const std::string& token) const;  // throws on unknown token
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode_ids(const std::string& text) const;
  TokenSeq encode(const std::string& text, Role role) const;  // responses get EOS appended
  std::string decode(std::span<const int> ids) const;         // specials skipped

  uint64_t fingerprint() const;
  VocabConfig config() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int max_seq_len_ = 96;
  void rebuild_index();
};

}  // namespace mcmdpo
