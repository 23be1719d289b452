#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcmdpo/image.hpp"
#include "mcmdpo/llm_client.hpp"
#include "mcmdpo/losses.hpp"
#include "mcmdpo/reject.hpp"
#include "mcmdpo/tokens.hpp"

namespace mcmdpo {
namespace pipeline {

// --- dataset records ---------------------------------------------------------

enum class MediaKind { static_image, animated };

struct RawPost {
  std::string id;
  ImageTensor image;
  std::string image_path;  // set when the record referenced a file
  std::string post_text;
  std::string alt_text;
  MediaKind media_kind = MediaKind::static_image;
  std::string language;           // optional hint
  std::string rejected_alt_text;  // optional precomputed rejection
};

// One record per line, JSON syntax. Malformed lines are skipped and
// reported with their line numbers; more than 10% malformed is fatal.
struct IngestStats {
  int total_lines = 0;
  std::vector<std::pair<int, std::string>> skipped;  // (line number, reason)
};
struct IngestResult {
  std::vector<RawPost> posts;
  IngestStats stats;
};
IngestResult ingest(const std::string& path);

void write_dataset(std::span<const RawPost> posts, const std::string& path);

// --- filtering ----------------------------------------------------------------

struct FilterRules {
  int min_alt_words = 5;
  bool reject_animated = true;
  bool reject_hashtags = true;
  bool english_only = true;
};

enum class DropReason { none, animated, non_english, hashtag, min_words };
const char* drop_reason_code(DropReason reason);

struct FilterDecision {
  bool keep = true;
  DropReason reason = DropReason::none;
};

// Rules run in a fixed order (animated, non-English, hashtags, minimum
// words); the first failure is the reported reason. The English heuristic
// wants >= 90% ASCII characters and at least one built-in stopword.
FilterDecision filter_sample(const RawPost& raw, const FilterRules& rules);

// --- deduplication -------------------------------------------------------------

struct Embedder {
  std::function<std::vector<double>(const std::string&)> text;
  std::function<std::vector<double>(const ImageTensor&)> image;
  // Hashed bag-of-words for text, per-patch intensity histograms for images.
  static Embedder toy();
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct DedupResult {
  std::vector<RawPost> kept;
  std::vector<std::string> dropped_ids;
};

// Greedy first-wins scan in input order: a sample is dropped when the text
// OR image embedding is within `threshold` cosine of any kept sample.
DedupResult dedup(std::span<const RawPost> samples, const Embedder& embedder, double threshold);

// --- person-name redaction ------------------------------------------------------

using NameRecognizer = std::function<std::vector<std::pair<size_t, size_t>>(const std::string&)>;

// Capitalized tokens found in a bundled first-name lexicon, plus one
// following capitalized token.
NameRecognizer default_name_recognizer();

std::string replace_person_names(const std::string& text,
                                 const NameRecognizer& recognizer = default_name_recognizer());

// --- grammar correction ----------------------------------------------------------

struct GrammarResult {
  bool changed = false;
  std::string text;
  bool flagged = false;  // unparseable reply; original kept
};

GrammarResult grammar_correct(const std::string& text, LlmClient& client,
                              const PromptTemplates& templates = PromptTemplates::defaults(),
                              int parse_retries = 2);

// --- preference verification ------------------------------------------------------

enum class VerifyStatus { unverified, verified, dropped, dropped_transport };
const char* verify_status_name(VerifyStatus status);

struct PreferencePair {
  std::string sample_id;
  std::string chosen;
  std::string rejected;
  VerifyStatus status = VerifyStatus::unverified;
  int regenerations = 0;
  // "verified", "regenerated(n)" once verified after n > 0 regenerations,
  // "dropped", "dropped_transport".
  std::string status_label() const;
};

// Swap protocol: the judge must pick the chosen text in both orders; on
// disagreement the rejected text is regenerated (at most max_attempts
// times) and the pair re-judged, then dropped.
PreferencePair verify_preference(PreferencePair pair, LlmClient& judge,
                                 const std::function<std::string()>& regenerate,
                                 const std::string& image_description,
                                 const std::string& context,
                                 const PromptTemplates& templates = PromptTemplates::defaults(),
                                 int max_attempts = 3);

// --- manifest -------------------------------------------------------------------

struct ManifestProvenance {
  std::string image_strategy;
  int noise_T = 0;
  std::string context_source_id;
  std::string reject_mode;
  std::string verify_status;
};

struct ManifestItem {
  PreferenceItem item;
  ManifestProvenance provenance;
};

struct ManifestHeader {
  int version = 1;
  int count = 0;
  uint64_t seed = 0;
  std::map<std::string, int64_t> splits;  // optional dataset-level counts
};

struct PreferenceManifest {
  ManifestHeader header;
  std::vector<ManifestItem> items;
};

void write_manifest(const PreferenceManifest& manifest, const std::string& path);
PreferenceManifest read_manifest(const std::string& path);

// --- conductor -------------------------------------------------------------------

struct PipelineConfig {
  FilterRules rules;
  double dedup_threshold = 0.95;
  bool grammar_correction = true;
  RejectImageStrategy image_strategy = RejectImageStrategy::diffusion();
  RejectResponseMode reject_mode = RejectResponseMode::synthetic_corruption;
  std::string prompt_text = "write a short alt text";
  int max_verify_attempts = 3;
  uint64_t seed = 0;
};

struct PipelineClients {
  LlmClient* grammar = nullptr;  // required when grammar_correction is on
  LlmClient* reject = nullptr;   // required in external_client mode
  LlmClient* judge = nullptr;    // required
};

struct DropRecord {
  std::string id;
  std::string reason;
};

struct PipelineOutput {
  std::vector<RawPost> cleaned;
  Vocabulary vocab;
  PreferenceManifest manifest;
  std::vector<DropRecord> drops;
};

// Step 3 alone: every cleaned sample becomes a full PreferenceItem with a
// forged image, a context borrowed from another sample, and a verified
// rejected response. Per-item seeds derive from the id, so the result is
// order-independent of thread scheduling and reproducible.
PreferenceManifest build_preference_manifest(std::span<const RawPost> cleaned,
                                             const Vocabulary& vocab,
                                             const PipelineConfig& config,
                                             const PipelineClients& clients,
                                             std::vector<DropRecord>* drops = nullptr);

// Steps 1-3: filter, dedup, redact, grammar-correct, build vocabulary,
// forge rejections, verify.
PipelineOutput run_pipeline(std::vector<RawPost> raw, const PipelineConfig& config,
                            const PipelineClients& clients);

}  // namespace pipeline
}  // namespace mcmdpo
