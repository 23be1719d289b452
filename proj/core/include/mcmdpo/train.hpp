#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcmdpo/checkpoint.hpp"
#include "mcmdpo/losses.hpp"
#include "mcmdpo/metrics.hpp"
#include "mcmdpo/pipeline.hpp"
#include "mcmdpo/synth.hpp"

namespace mcmdpo {
namespace train {

struct TrainConfig {
  std::string stage = "sft";       // sft | pref
  std::string method = "mcm_dpo";  // pref only: dpo | mcm_dpo
  std::string paradigm = "P4";
  LossWeights weights;  // lambda 1.0, alpha 0.5, gamma 0.2, beta 0.1
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-2;                // pref runs default to 1e-3 (see pref_defaults)
  int epochs = 5;
  int batch_size = 16;
  uint64_t seed = 0;
  ModelDims dims;
  std::string prompt_text = "write a short alt text";
  int gen_max_len = 24;

  std::string train_data;      // sft: dataset jsonl
  std::string pref_manifest;   // pref: preference manifest
  std::string test_data;       // eval
  std::string vocab_path;
  std::string checkpoint_in;   // pref/eval
  std::string checkpoint_out;
  std::string report_path;

  bool deterministic_report = false;  // zero wall time in the report file
  std::array<bool, kNumTerms> term_mask = {true, true, true, true, true, true, true};

  static TrainConfig sft_defaults();
  static TrainConfig pref_defaults();
  // "paper-schedule": 1 SFT epoch at lr 2e-5, 3 preference epochs at 5e-7.
  void apply_preset(const std::string& preset);
  void load_json_file(const std::string& path);  // overlays file values
  std::string to_json() const;
  std::string hash() const;
  void validate() const;

  Paradigm paradigm_enum() const { return parse_paradigm(paradigm); }
  PrefMethod method_enum() const { return parse_method(method); }
  TermMask mask() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  std::map<std::string, double> term_means;
};

struct RunReport {
  std::string stage;
  std::string config_echo;  // config JSON
  std::string config_hash;
  std::optional<double> initial_loss;  // pref: pre-step full-set mean loss
  std::vector<EpochStats> epochs;
  std::optional<metrics::MetricReport> final_metrics;
  double wall_time_seconds = 0;

  std::string to_json(bool deterministic) const;
  void save(const std::string& path, bool deterministic) const;
  void validate(int configured_epochs) const;
};

// --- in-memory cores ---------------------------------------------------------

ModelParams train_sft(ModelParams params, std::span<const SftExample> data,
                      const TrainConfig& config, RunReport* report);

ModelParams train_pref(ModelParams policy, const ModelParams& reference,
                       std::span<const PreferenceItem> items, const TrainConfig& config,
                       RunReport* report);

struct EvalOutput {
  metrics::MetricReport report;
  std::vector<std::pair<std::string, std::string>> generations;  // (id, text)
};

EvalOutput evaluate_model(const ModelParams& params, const Vocabulary& vocab,
                          std::span<const pipeline::RawPost> test_set,
                          const std::string& prompt_text, int gen_max_len);

// Conversions between dataset records and training examples.
std::vector<SftExample> to_sft_examples(std::span<const pipeline::RawPost> posts,
                                        const Vocabulary& vocab, const std::string& prompt_text);
std::vector<pipeline::RawPost> to_raw_posts(std::span<const synth::SynthSample> samples);

// --- file-level commands (the CLI calls these) --------------------------------

RunReport run_sft(const TrainConfig& config);
RunReport run_pref(const TrainConfig& config);
metrics::MetricReport run_eval(const TrainConfig& config, const std::string& out_json,
                               const std::string& out_csv);

struct SweepRow {
  std::string key;
  metrics::MetricReport report;
};
// kind: gamma | noise_T | strategy | ablation. Every grid point trains an
// independent preference run from the same SFT checkpoint and seed.
std::vector<SweepRow> run_sweep(const std::string& kind, const std::vector<std::string>& grid,
                                const TrainConfig& base, const std::string& pref_raw_data,
                                const std::string& out_csv);

TermMask parse_ablation(const std::string& spec);

void export_embeddings(const ModelParams& params, const Vocabulary& vocab,
                       std::span<const pipeline::RawPost> samples, const std::string& prompt_text,
                       int gen_max_len, const std::string& out_csv);

}  // namespace train
}  // namespace mcmdpo
