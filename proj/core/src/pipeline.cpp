#include "mcmdpo/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcmdpo/text.hpp"

namespace mcmdpo {
namespace pipeline {

namespace {

using nlohmann::json;

json image_to_json(const ImageTensor& img) {
  return json{{"h", img.h}, {"w", img.w}, {"c", img.c}, {"data", img.data}};
}

ImageTensor image_from_json(const json& j) {
  ImageTensor img;
  img.h = j.at("h").get<int>();
  img.w = j.at("w").get<int>();
  img.c = j.at("c").get<int>();
  img.data = j.at("data").get<std::vector<double>>();
  img.validate();
  return img;
}

MediaKind media_kind_from(const std::string& s) {
  if (s == "static") return MediaKind::static_image;
  if (s == "animated") return MediaKind::animated;
  throw std::invalid_argument("unknown media_kind '" + s + "'");
}

const char* media_kind_name(MediaKind k) {
  return k == MediaKind::static_image ? "static" : "animated";
}

RawPost post_from_json(const json& j, const std::filesystem::path& base_dir) {
  RawPost post;
  post.id = j.at("id").get<std::string>();
  if (post.id.empty()) throw std::invalid_argument("empty id");
  post.post_text = j.at("post_text").get<std::string>();
  post.alt_text = j.at("alt_text").get<std::string>();
  post.media_kind = media_kind_from(j.value("media_kind", "static"));
  post.language = j.value("language", "");
  post.rejected_alt_text = j.value("rejected_alt_text", "");
  if (j.contains("image")) {
    post.image = image_from_json(j.at("image"));
  } else if (j.contains("image_path")) {
    post.image_path = j.at("image_path").get<std::string>();
    std::ifstream img_in(base_dir / post.image_path);
    if (!img_in) throw std::runtime_error("cannot open image file " + post.image_path);
    json img_json;
    img_in >> img_json;
    post.image = image_from_json(img_json);
  } else {
    throw std::invalid_argument("record needs image or image_path");
  }
  return post;
}

}  // namespace

IngestResult ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest: cannot open " + path);
  const std::filesystem::path base_dir = std::filesystem::path(path).parent_path();

  IngestResult result;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    result.stats.total_lines += 1;
    try {
      RawPost post = post_from_json(json::parse(line), base_dir);
      if (!seen_ids.insert(post.id).second) {
        throw std::invalid_argument("duplicate id '" + post.id + "'");
      }
      result.posts.push_back(std::move(post));
    } catch (const std::exception& e) {
      result.stats.skipped.emplace_back(line_no, e.what());
      std::cerr << "ingest: " << path << ":" << line_no << ": skipped (" << e.what() << ")\n";
    }
  }

  const int malformed = static_cast<int>(result.stats.skipped.size());
  if (result.stats.total_lines > 0 &&
      10 * malformed > result.stats.total_lines) {  // strictly more than 10%
    std::ostringstream os;
    os << "ingest: " << path << ": " << malformed << " of " << result.stats.total_lines
       << " lines malformed (>10%); first offenders:";
    for (size_t i = 0; i < result.stats.skipped.size() && i < 5; ++i) {
      os << " line " << result.stats.skipped[i].first << ";";
    }
    throw std::runtime_error(os.str());
  }
  return result;
}

void write_dataset(std::span<const RawPost> posts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset: cannot write " + path);
  for (const RawPost& post : posts) {
    json j;
    j["id"] = post.id;
    j["image"] = image_to_json(post.image);
    j["post_text"] = post.post_text;
    j["alt_text"] = post.alt_text;
    j["media_kind"] = media_kind_name(post.media_kind);
    if (!post.language.empty()) j["language"] = post.language;
    if (!post.rejected_alt_text.empty()) j["rejected_alt_text"] = post.rejected_alt_text;
    out << j.dump() << "\n";
  }
}

const char* drop_reason_code(DropReason reason) {
  switch (reason) {
    case DropReason::none: return "none";
    case DropReason::animated: return "animated";
    case DropReason::non_english: return "non_english";
    case DropReason::hashtag: return "hashtag";
    case DropReason::min_words: return "min_words";
  }
  return "?";
}

namespace {

int whitespace_word_count(const std::string& s) {
  std::istringstream is(s);
  std::string w;
  int n = 0;
  while (is >> w) ++n;
  return n;
}

bool looks_english(const std::string& text) {
  size_t total = 0, ascii = 0;
  count_codepoints(text, &total, &ascii);
  if (total == 0) return false;
  if (static_cast<double>(ascii) < 0.9 * static_cast<double>(total)) return false;
  for (const std::string& tok : tokenize_words(text)) {
    if (is_stopword(tok)) return true;
  }
  return false;
}

}  // namespace

FilterDecision filter_sample(const RawPost& raw, const FilterRules& rules) {
  if (rules.reject_animated && raw.media_kind == MediaKind::animated) {
    return {false, DropReason::animated};
  }
  if (rules.english_only && !looks_english(raw.post_text + " " + raw.alt_text)) {
    return {false, DropReason::non_english};
  }
  if (rules.reject_hashtags &&
      (raw.post_text.find('#') != std::string::npos ||
       raw.alt_text.find('#') != std::string::npos)) {
    return {false, DropReason::hashtag};
  }
  if (whitespace_word_count(raw.alt_text) < rules.min_alt_words) {
    return {false, DropReason::min_words};
  }
  return {true, DropReason::none};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Embedder Embedder::toy() {
  Embedder e;
  e.text = [](const std::string& text) {
    std::vector<double> v(128, 0.0);
    for (const std::string& tok : tokenize_words(text)) {
      v[fnv1a(tok) % 128] += 1.0;
    }
    return v;
  };
  e.image = [](const ImageTensor& img) {
    constexpr int kGrid = 4;
    constexpr int kBins = 8;
    const int gy = std::min(kGrid, img.h);
    const int gx = std::min(kGrid, img.w);
    std::vector<double> v(static_cast<size_t>(kGrid) * kGrid * kBins, 0.0);
    for (int y = 0; y < img.h; ++y) {
      for (int x = 0; x < img.w; ++x) {
        double mean = 0.0;
        for (int ch = 0; ch < img.c; ++ch) mean += img.at(y, x, ch);
        mean /= img.c;
        const int bin = std::min(kBins - 1, static_cast<int>(mean * kBins));
        const int py = std::min(gy - 1, y * gy / img.h);
        const int px = std::min(gx - 1, x * gx / img.w);
        v[static_cast<size_t>((py * kGrid + px) * kBins + bin)] += 1.0;
      }
    }
    return v;
  };
  return e;
}

DedupResult dedup(std::span<const RawPost> samples, const Embedder& embedder, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("dedup: threshold must lie in (0, 1]");
  }
  DedupResult result;
  std::vector<std::vector<double>> kept_text, kept_image;
  for (const RawPost& sample : samples) {
    const std::vector<double> tvec = embedder.text(sample.post_text + " " + sample.alt_text);
    const std::vector<double> ivec = embedder.image(sample.image);
    bool duplicate = false;
    for (size_t k = 0; k < kept_text.size() && !duplicate; ++k) {
      if (cosine_similarity(tvec, kept_text[k]) >= threshold ||
          cosine_similarity(ivec, kept_image[k]) >= threshold) {
        duplicate = true;
      }
    }
    if (duplicate) {
      result.dropped_ids.push_back(sample.id);
    } else {
      result.kept.push_back(sample);
      kept_text.push_back(tvec);
      kept_image.push_back(ivec);
    }
  }
  return result;
}

namespace {

const std::set<std::string>& first_name_lexicon() {
  static const std::set<std::string> names = {
      "alice", "amy",    "anna",   "ben",    "bob",    "carol",  "claire", "david",
      "diana", "emma",   "eric",   "frank",  "grace",  "hannah", "henry",  "irene",
      "jack",  "james",  "jane",   "john",   "karen",  "kevin",  "liam",   "linda",
      "lucy",  "maria",  "mark",   "mary",   "michael", "mike",  "nina",   "noah",
      "olivia", "oscar", "paul",   "peter",  "quinn",  "rachel", "rose",   "sam",
      "sarah", "sophie", "steve",  "tina",   "tom",    "victor", "wendy",  "zoe"};
  return names;
}

bool is_capitalized_word(const std::string& s) {
  return !s.empty() && std::isupper(static_cast<unsigned char>(s[0]));
}

struct WordSpan {
  size_t begin, end;
  std::string word;
};

std::vector<WordSpan> word_spans(const std::string& text) {
  std::vector<WordSpan> spans;
  size_t i = 0;
  while (i < text.size()) {
    if (std::isalpha(static_cast<unsigned char>(text[i]))) {
      size_t j = i;
      while (j < text.size() && (std::isalpha(static_cast<unsigned char>(text[j])) ||
                                 text[j] == '\'')) {
        ++j;
      }
      spans.push_back({i, j, text.substr(i, j - i)});
      i = j;
    } else {
      ++i;
    }
  }
  return spans;
}

}  // namespace

NameRecognizer default_name_recognizer() {
  return [](const std::string& text) {
    std::vector<std::pair<size_t, size_t>> spans;
    const std::vector<WordSpan> words = word_spans(text);
    size_t i = 0;
    while (i < words.size()) {
      if (is_capitalized_word(words[i].word) &&
          first_name_lexicon().count(lowercase(words[i].word))) {
        const size_t begin = words[i].begin;
        size_t end = words[i].end;
        // A following capitalized token joins the span (surnames).
        if (i + 1 < words.size() && is_capitalized_word(words[i + 1].word)) {
          ++i;
          end = words[i].end;
        }
        spans.emplace_back(begin, end);
      }
      ++i;
    }
    return spans;
  };
}

std::string replace_person_names(const std::string& text, const NameRecognizer& recognizer) {
  std::vector<std::pair<size_t, size_t>> spans = recognizer(text);
  std::sort(spans.begin(), spans.end());
  std::string out = text;
  for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
    out.replace(it->first, it->second - it->first, kPersonToken);
  }
  return out;
}

GrammarResult grammar_correct(const std::string& text, LlmClient& client,
                              const PromptTemplates& templates, int parse_retries) {
  templates.validate();
  const std::string prompt = fill_template(templates.grammar, {{"text", text}});
  const std::string marker = "Corrected text:";

  for (int attempt = 0; attempt <= parse_retries; ++attempt) {
    std::string reply;
    try {
      reply = client.complete(prompt);
    } catch (const ClientError& e) {
      std::cerr << "grammar_correct: client failure (" << e.what() << "); keeping original\n";
      return {false, text, true};
    }
    const size_t first = reply.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    if (reply.compare(first, 5, "False") == 0) return {false, text, false};
    if (reply.compare(first, 4, "True") == 0) {
      const size_t at = reply.find(marker);
      if (at == std::string::npos) continue;  // malformed; retry
      std::string corrected = reply.substr(at + marker.size());
      const size_t begin = corrected.find_first_not_of(" \t\r\n");
      const size_t last = corrected.find_last_not_of(" \t\r\n");
      if (begin == std::string::npos) continue;
      corrected = corrected.substr(begin, last - begin + 1);
      return {true, corrected, false};
    }
  }
  std::cerr << "grammar_correct: unparseable reply after retries; keeping original\n";
  return {false, text, true};
}

const char* verify_status_name(VerifyStatus status) {
  switch (status) {
    case VerifyStatus::unverified: return "unverified";
    case VerifyStatus::verified: return "verified";
    case VerifyStatus::dropped: return "dropped";
    case VerifyStatus::dropped_transport: return "dropped_transport";
  }
  return "?";
}

std::string PreferencePair::status_label() const {
  if (status == VerifyStatus::verified && regenerations > 0) {
    return "regenerated(" + std::to_string(regenerations) + ")";
  }
  return verify_status_name(status);
}

namespace {

enum class JudgeAnswer { option_a, option_b };

JudgeAnswer parse_judge_reply(const std::string& reply) {
  for (char ch : reply) {
    if (ch == 'A' || ch == 'a') return JudgeAnswer::option_a;
    if (ch == 'B' || ch == 'b') return JudgeAnswer::option_b;
    if (!std::isspace(static_cast<unsigned char>(ch))) break;
  }
  throw ClientError("judge reply unparseable: '" + reply + "'", 1);
}

}  // namespace

PreferencePair verify_preference(PreferencePair pair, LlmClient& judge,
                                 const std::function<std::string()>& regenerate,
                                 const std::string& image_description, const std::string& context,
                                 const PromptTemplates& templates, int max_attempts) {
  templates.validate();
  if (pair.status != VerifyStatus::unverified) {
    throw std::invalid_argument("verify_preference: pair already processed");
  }

  auto ask = [&](const std::string& option_a, const std::string& option_b) {
    const std::string prompt = fill_template(templates.judge, {{"image", image_description},
                                                               {"context", context},
                                                               {"option_a", option_a},
                                                               {"option_b", option_b}});
    return parse_judge_reply(judge.complete(prompt));
  };

  constexpr int kTransportRetries = 3;
  for (int attempt = 0; attempt <= max_attempts; ++attempt) {
    bool agreed = false;
    bool evaluated = false;
    for (int transport = 0; transport < kTransportRetries && !evaluated; ++transport) {
      try {
        // Both orders must pick the chosen text; this is what defeats a
        // position-biased judge.
        const bool straight = ask(pair.chosen, pair.rejected) == JudgeAnswer::option_a;
        const bool swapped = ask(pair.rejected, pair.chosen) == JudgeAnswer::option_b;
        agreed = straight && swapped;
        evaluated = true;
      } catch (const ClientError&) {
        // retry the whole two-call evaluation
      }
    }
    if (!evaluated) {
      pair.status = VerifyStatus::dropped_transport;
      return pair;
    }
    if (agreed) {
      pair.status = VerifyStatus::verified;
      pair.regenerations = attempt;
      return pair;
    }
    if (attempt < max_attempts) pair.rejected = regenerate();
  }
  pair.status = VerifyStatus::dropped;
  pair.regenerations = max_attempts;
  return pair;
}

namespace {

json token_ids(const TokenSeq& seq) { return json(seq.ids); }

TokenSeq seq_from(const json& j, Role role) {
  return TokenSeq{j.get<std::vector<int>>(), role};
}

json manifest_item_to_json(const ManifestItem& mi) {
  json j;
  j["id"] = mi.item.id;
  j["x"] = token_ids(mi.item.x);
  j["c_w"] = token_ids(mi.item.c_w);
  j["c_l"] = token_ids(mi.item.c_l);
  j["y_w"] = token_ids(mi.item.y_w);
  j["y_l"] = token_ids(mi.item.y_l);
  j["m_w"] = image_to_json(mi.item.m_w);
  j["m_l"] = image_to_json(mi.item.m_l);
  j["provenance"] = {{"image_strategy", mi.provenance.image_strategy},
                     {"noise_T", mi.provenance.noise_T},
                     {"context_source_id", mi.provenance.context_source_id},
                     {"reject_mode", mi.provenance.reject_mode},
                     {"verify_status", mi.provenance.verify_status}};
  return j;
}

ManifestItem manifest_item_from_json(const json& j) {
  ManifestItem mi;
  mi.item.id = j.at("id").get<std::string>();
  mi.item.x = seq_from(j.at("x"), Role::prompt);
  mi.item.c_w = seq_from(j.at("c_w"), Role::context);
  mi.item.c_l = seq_from(j.at("c_l"), Role::context);
  mi.item.y_w = seq_from(j.at("y_w"), Role::response);
  mi.item.y_l = seq_from(j.at("y_l"), Role::response);
  mi.item.m_w = image_from_json(j.at("m_w"));
  mi.item.m_l = image_from_json(j.at("m_l"));
  const json& p = j.at("provenance");
  mi.provenance.image_strategy = p.at("image_strategy").get<std::string>();
  mi.provenance.noise_T = p.at("noise_T").get<int>();
  mi.provenance.context_source_id = p.at("context_source_id").get<std::string>();
  mi.provenance.reject_mode = p.at("reject_mode").get<std::string>();
  mi.provenance.verify_status = p.at("verify_status").get<std::string>();
  return mi;
}

}  // namespace

void write_manifest(const PreferenceManifest& manifest, const std::string& path) {
  if (manifest.header.count != static_cast<int>(manifest.items.size())) {
    throw std::invalid_argument("write_manifest: header count " +
                                std::to_string(manifest.header.count) + " != " +
                                std::to_string(manifest.items.size()) + " items");
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("write_manifest: cannot write " + tmp);
    json header;
    header["kind"] = "pref_manifest";
    header["version"] = manifest.header.version;
    header["count"] = manifest.header.count;
    header["seed"] = manifest.header.seed;
    header["splits"] = manifest.header.splits;
    out << header.dump() << "\n";
    for (const ManifestItem& mi : manifest.items) out << manifest_item_to_json(mi).dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
}

PreferenceManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_manifest: empty file " + path);

  PreferenceManifest manifest;
  const json header = json::parse(line);
  if (header.value("kind", "") != "pref_manifest") {
    throw std::runtime_error("read_manifest: " + path + " is not a preference manifest");
  }
  manifest.header.version = header.at("version").get<int>();
  manifest.header.count = header.at("count").get<int>();
  manifest.header.seed = header.at("seed").get<uint64_t>();
  manifest.header.splits = header.value("splits", std::map<std::string, int64_t>{});

  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    manifest.items.push_back(manifest_item_from_json(json::parse(line)));
  }
  if (static_cast<int>(manifest.items.size()) != manifest.header.count) {
    throw std::runtime_error("read_manifest: header declares " +
                             std::to_string(manifest.header.count) + " items, file holds " +
                             std::to_string(manifest.items.size()));
  }
  return manifest;
}

PreferenceManifest build_preference_manifest(std::span<const RawPost> cleaned,
                                             const Vocabulary& vocab,
                                             const PipelineConfig& config,
                                             const PipelineClients& clients,
                                             std::vector<DropRecord>* drops) {
  if (clients.judge == nullptr) {
    throw std::invalid_argument("build_preference_manifest: judge client required");
  }
  if (config.reject_mode == RejectResponseMode::external_client && clients.reject == nullptr) {
    throw std::invalid_argument("build_preference_manifest: external mode needs a reject client");
  }

  const TokenSeq prompt = vocab.encode(config.prompt_text, Role::prompt);

  std::vector<TokenSeq> contexts;
  std::vector<ImageTensor> images;
  contexts.reserve(cleaned.size());
  images.reserve(cleaned.size());
  for (const RawPost& post : cleaned) {
    contexts.push_back(vocab.encode(post.post_text, Role::context));
    images.push_back(post.image);
  }

  PreferenceManifest manifest;
  manifest.header.seed = config.seed;

  for (size_t i = 0; i < cleaned.size(); ++i) {
    const RawPost& post = cleaned[i];
    Rng rng(derive_seed(config.seed, post.id));
    try {
      ManifestItem mi;
      mi.item.id = post.id;
      mi.item.x = prompt;
      mi.item.m_w = post.image;
      mi.item.c_w = contexts[i];
      mi.item.y_w = vocab.encode(post.alt_text, Role::response);

      // The loss rejects degenerate pairs, so the forged components must
      // differ from the chosen ones in content, not just in origin.
      const ImagePool pool{images, i};
      mi.item.m_l = make_rejected_image(post.image, config.image_strategy, rng,
                                        NoiseSchedule::standard(), &pool);
      for (int retry = 0; retry < 4 && mi.item.m_l == mi.item.m_w; ++retry) {
        mi.item.m_l = make_rejected_image(post.image, config.image_strategy, rng,
                                          NoiseSchedule::standard(), &pool);
      }
      if (mi.item.m_l == mi.item.m_w) {
        throw std::runtime_error("rejected image equals the chosen image");
      }

      RejectedContext rc = make_rejected_context(contexts, i, rng);
      for (int retry = 0; retry < 16 && rc.context.ids == mi.item.c_w.ids; ++retry) {
        rc = make_rejected_context(contexts, i, rng);
      }
      if (rc.context.ids == mi.item.c_w.ids) {
        throw std::runtime_error("no distinct rejected context available");
      }
      mi.item.c_l = rc.context;

      RejectResponseInput reject_input;
      reject_input.context_text = post.post_text;
      reject_input.alt_text = post.alt_text;
      reject_input.alt_ids = vocab.encode_ids(post.alt_text);

      std::string reject_mode_used;
      std::string initial_rejected;
      if (!post.rejected_alt_text.empty()) {
        initial_rejected = post.rejected_alt_text;
        reject_mode_used = "precomputed";
      } else {
        const TokenSeq forged = make_rejected_response(reject_input, config.reject_mode, vocab,
                                                       clients.reject, rng);
        initial_rejected = vocab.decode(forged.ids);
        reject_mode_used = reject_mode_name(config.reject_mode);
      }

      auto regenerate = [&]() {
        const TokenSeq forged = make_rejected_response(reject_input, config.reject_mode, vocab,
                                                       clients.reject, rng);
        reject_mode_used = reject_mode_name(config.reject_mode);
        return vocab.decode(forged.ids);
      };

      // Offline stand-in for showing the judge the image: the user-written
      // description fills the image slot of the judge prompt.
      PreferencePair pair{post.id, post.alt_text, initial_rejected};
      pair = verify_preference(pair, *clients.judge, regenerate, post.alt_text, post.post_text,
                               PromptTemplates::defaults(), config.max_verify_attempts);

      if (pair.status != VerifyStatus::verified) {
        if (drops) {
          drops->push_back({post.id, pair.status == VerifyStatus::dropped_transport
                                         ? "verify_transport"
                                         : "verify_dropped"});
        }
        continue;
      }

      mi.item.y_l = vocab.encode(pair.rejected, Role::response);
      mi.item.validate();

      mi.provenance.image_strategy = config.image_strategy.name();
      mi.provenance.noise_T =
          config.image_strategy.kind == RejectImageStrategy::Kind::diffusion
              ? config.image_strategy.noise_steps
              : 0;
      mi.provenance.context_source_id = cleaned[rc.source_index].id;
      mi.provenance.reject_mode = reject_mode_used;
      mi.provenance.verify_status = pair.status_label();
      manifest.items.push_back(std::move(mi));
    } catch (const std::exception& e) {
      std::cerr << "build_preference_manifest: sample " << post.id << " skipped: " << e.what()
                << "\n";
      if (drops) drops->push_back({post.id, std::string("reject_failed: ") + e.what()});
    }
  }

  manifest.header.count = static_cast<int>(manifest.items.size());
  return manifest;
}

PipelineOutput run_pipeline(std::vector<RawPost> raw, const PipelineConfig& config,
                            const PipelineClients& clients) {
  PipelineOutput out;

  // Step 1: filter.
  std::vector<RawPost> filtered;
  for (RawPost& post : raw) {
    const FilterDecision decision = filter_sample(post, config.rules);
    if (!decision.keep) {
      out.drops.push_back({post.id, drop_reason_code(decision.reason)});
      continue;
    }
    filtered.push_back(std::move(post));
  }

  // Deduplicate, then redact person names.
  DedupResult dd = dedup(filtered, Embedder::toy(), config.dedup_threshold);
  for (const std::string& id : dd.dropped_ids) out.drops.push_back({id, "duplicate"});
  for (RawPost& post : dd.kept) {
    post.post_text = replace_person_names(post.post_text);
    post.alt_text = replace_person_names(post.alt_text);
  }

  // Step 2: grammar correction over both text fields.
  if (config.grammar_correction) {
    if (clients.grammar == nullptr) {
      throw std::invalid_argument("run_pipeline: grammar client required");
    }
    for (RawPost& post : dd.kept) {
      post.post_text = grammar_correct(post.post_text, *clients.grammar).text;
      post.alt_text = grammar_correct(post.alt_text, *clients.grammar).text;
    }
  }
  out.cleaned = std::move(dd.kept);

  // Vocabulary over every surviving text (plus the prompt and any
  // precomputed rejections).
  std::vector<std::string> texts;
  texts.push_back(config.prompt_text);
  for (const RawPost& post : out.cleaned) {
    texts.push_back(post.post_text);
    texts.push_back(post.alt_text);
    if (!post.rejected_alt_text.empty()) texts.push_back(post.rejected_alt_text);
  }
  out.vocab = Vocabulary::build(texts, 96);

  // Step 3: forge and verify preference pairs.
  out.manifest =
      build_preference_manifest(out.cleaned, out.vocab, config, clients, &out.drops);
  return out;
}

}  // namespace pipeline
}  // namespace mcmdpo
