#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcmdpo/model.hpp"

namespace mcmdpo {

// One rejected-or-chosen conditioning triple (image, context, response).
struct Conditioning {
  ImageTensor m;
  TokenSeq c;
  TokenSeq y;
  bool operator==(const Conditioning&) const = default;
};

// One training record: prompt plus chosen/rejected image, context, response.
struct PreferenceItem {
  std::string id;
  TokenSeq x;
  ImageTensor m_w, m_l;
  TokenSeq c_w, c_l;
  TokenSeq y_w, y_l;
  void validate() const;  // y_w != y_l
};

struct LossWeights {
  double lambda = 1.0;
  double alpha = 0.5;
  double gamma = 0.2;
  double beta = 0.1;  // reward temperature
  void validate() const;
};

// Term order used everywhere a seven-vector appears.
enum TermIndex : int { kRpo = 0, kVpo, kCpo, kVrpo, kCrpo, kVcpo, kMtpo, kNumTerms };
const char* term_name(int term);

// Ablation switch: a disabled term still gets evaluated and reported but
// contributes zero to the combined objective.
struct TermMask {
  std::array<bool, kNumTerms> enabled = {true, true, true, true, true, true, true};
  static TermMask all() { return {}; }
  static TermMask without(std::initializer_list<int> terms);
  bool operator[](int term) const { return enabled[static_cast<size_t>(term)]; }
};

struct LossBreakdown {
  double rpo = 0, vpo = 0, cpo = 0, vrpo = 0, crpo = 0, vcpo = 0, mtpo = 0;
  double combined = 0;
  double term(int index) const;
  std::array<double, kNumTerms> terms() const { return {rpo, vpo, cpo, vrpo, crpo, vcpo, mtpo}; }
};

// combined = lambda*rpo + alpha*(vpo+cpo) + gamma*(((vrpo+crpo)+vcpo)+mtpo),
// with masked terms contributing zero. Evaluated in this exact association
// both here and in the loss graphs.
double combine_terms(const std::array<double, kNumTerms>& terms, const LossWeights& w,
                     const TermMask& mask = {});

// --- value-level API -------------------------------------------------------

// beta * (log pi_policy(y|x,m,c) - log pi_reference(y|x,m,c)). No gradient
// ever flows into the reference.
double reward(const ModelParams& policy, const ModelParams& reference, double beta,
              const TokenSeq& x, const Conditioning& cond);

// -log sigma(reward(chosen) - reward(rejected)); rejects identical
// chosen/rejected conditionings as a degenerate pair.
double pref_term(const ModelParams& policy, const ModelParams& reference, double beta,
                 const TokenSeq& x, const Conditioning& chosen, const Conditioning& rejected);

// Context-free response-pair objective (the plain multimodal DPO baseline).
double mdpo_baseline_loss(const ModelParams& policy, const ModelParams& reference, double beta,
                          const TokenSeq& x, const ImageTensor& m_w, const TokenSeq& y_w,
                          const TokenSeq& y_l);

LossBreakdown mcm_dpo_loss(const ModelParams& policy, const ModelParams& reference,
                           const PreferenceItem& item, const LossWeights& weights,
                           const TermMask& mask = {});

struct BatchLossResult {
  double combined_mean = 0;
  std::array<double, kNumTerms> term_means = {};
  LossBreakdown mean_breakdown() const;
};

BatchLossResult batch_loss(const ModelParams& policy, const ModelParams& reference,
                           std::span<const PreferenceItem> items, const LossWeights& weights,
                           const TermMask& mask = {});

// --- graph-level API (training path) ---------------------------------------

// Reference log-probs for the distinct conditionings of an item (eight
// chosen/rejected combinations plus the two context-free baseline slots),
// so a frozen reference is evaluated once per item per stage.
struct ItemRefLogprobs {
  std::array<double, 10> values = {};
};
ItemRefLogprobs reference_logprobs(const ModelParams& reference, const PreferenceItem& item);

enum class PrefMethod { dpo, mcm_dpo };
PrefMethod parse_method(const std::string& s);
const char* method_name(PrefMethod m);

// A built preference-loss graph over one batch: `root` is the mean combined
// loss, breakdowns carry per-item term values.
struct PrefBatchGraph {
  ModelGraph model_graph;
  NodeId root = -1;
  std::vector<LossBreakdown> per_item;
  BatchLossResult stats() const;
};

PrefBatchGraph build_pref_batch(const ModelParams& policy,
                                const std::set<std::string>& trainable,
                                std::span<const PreferenceItem> items,
                                std::span<const ItemRefLogprobs> ref_logprobs,
                                const LossWeights& weights, const TermMask& mask,
                                PrefMethod method);

// Mean negative log-likelihood of gold responses; the supervised objective.
struct SftExample {
  std::string id;
  TokenSeq x, c, y;
  ImageTensor m;
};

struct SftBatchGraph {
  ModelGraph model_graph;
  NodeId root = -1;
  double loss = 0;
};
SftBatchGraph build_sft_batch(const ModelParams& params, const std::set<std::string>& trainable,
                              std::span<const SftExample> batch);

}  // namespace mcmdpo
