#include "mcmdpo/tokens.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mcmdpo/rng.hpp"
#include "mcmdpo/text.hpp"

namespace mcmdpo {

void VocabConfig::validate() const {
  if (vocab_size < 8) {
    throw std::invalid_argument("VocabConfig: vocab_size must be >= 8, got " +
                                std::to_string(vocab_size));
  }
  if (max_seq_len < 1) throw std::invalid_argument("VocabConfig: max_seq_len must be >= 1");
  const int specials[] = {pad_id, bos_id, eos_id, person_id};
  std::set<int> distinct;
  for (int s : specials) {
    if (s < 0 || s >= vocab_size) {
      throw std::invalid_argument("VocabConfig: special id " + std::to_string(s) +
                                  " outside vocab");
    }
    distinct.insert(s);
  }
  if (distinct.size() != 4) throw std::invalid_argument("VocabConfig: special ids collide");
}

const char* role_name(Role role) {
  switch (role) {
    case Role::prompt: return "prompt";
    case Role::context: return "context";
    case Role::response: return "response";
  }
  return "?";
}

TokenSeq empty_context() { return TokenSeq{{}, Role::context}; }

namespace {
std::vector<std::string> special_tokens() { return {"<pad>", "<bos>", "<eos>", kPersonToken}; }
}  // namespace

Vocabulary Vocabulary::build(std::span<const std::string> texts, int max_seq_len) {
  std::set<std::string> seen;
  for (const std::string& text : texts) {
    for (const std::string& tok : tokenize_words(text)) seen.insert(tok);
  }
  std::vector<std::string> tokens = special_tokens();
  for (const std::string& tok : seen) {
    if (tok != kPersonToken) tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens), max_seq_len);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int max_seq_len) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.max_seq_len_ = max_seq_len;
  const auto specials = special_tokens();
  if (v.tokens_.size() < specials.size()) {
    throw std::invalid_argument("Vocabulary: token list too short for specials");
  }
  for (size_t i = 0; i < specials.size(); ++i) {
    if (v.tokens_[i] != specials[i]) {
      throw std::invalid_argument("Vocabulary: slot " + std::to_string(i) + " must be " +
                                  specials[i] + ", got " + v.tokens_[i]);
    }
  }
  v.rebuild_index();
  v.config().validate();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Vocabulary: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_tokens(j.at("tokens").get<std::vector<std::string>>(),
                     j.at("max_seq_len").get<int>());
}

void Vocabulary::save(const std::string& path) const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["max_seq_len"] = max_seq_len_;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Vocabulary: cannot write " + path);
  out << j.dump(2) << "\n";
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) {
    throw std::out_of_range("Vocabulary: unknown token '" + token + "'");
  }
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode_ids(const std::string& text) const {
  std::vector<int> out;
  for (const std::string& tok : tokenize_words(text)) out.push_back(id(tok));
  return out;
}

TokenSeq Vocabulary::encode(const std::string& text, Role role) const {
  TokenSeq seq{encode_ids(text), role};
  if (role == Role::response) seq.ids.push_back(kEosId);
  return seq;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    words.push_back(token(id));
  }
  return join_tokens(words);
}

uint64_t Vocabulary::fingerprint() const {
  uint64_t h = 1469598103934665603ull;
  const char sep = '\x1f';
  for (const std::string& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(&sep, 1, h);
  }
  h = fnv1a(std::to_string(max_seq_len_), h);
  return h;
}

VocabConfig Vocabulary::config() const {
  VocabConfig c;
  c.vocab_size = std::max(size(), 8);
  c.max_seq_len = max_seq_len_;
  return c;
}

}  // namespace mcmdpo
