#pragma once

#include <span>
#include <string>
#include <vector>

#include "mcmdpo/losses.hpp"

namespace mcmdpo {
namespace metrics {

using Tokens = std::vector<std::string>;

// Lowercase word tokens with punctuation split off; same tokenizer the
// model vocabulary uses.
Tokens tokenize(const std::string& text);

// LCS F-measure with beta = 1.2; 0 when the LCS (or the candidate) is empty.
double rouge_l(const Tokens& candidate, const Tokens& reference);

// Corpus-level geometric mean of clipped n-gram precisions (n = 1..4) with
// add-one smoothing on zero counts, times the brevity penalty.
double bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references);

// CIDEr-D: tf-idf n-gram vectors (n = 1..4), idf over the reference corpus,
// clipped per-n cosine with a Gaussian length penalty (sigma = 6), averaged
// over n and scaled by 10. Degenerate idf (single-document corpora) yields 0.
double cider_d(std::span<const Tokens> candidates, std::span<const Tokens> references);

// Unigram METEOR without synonym matching ("simplified METEOR"): exact then
// stemmed alignment, F = PR / (0.9 P + 0.1 R), chunk penalty
// 0.5 * (chunks / matches)^3.
double meteor_simplified(const Tokens& candidate, const Tokens& reference);

// Suffix-stripping stemmer used by the METEOR alignment.
std::string stem(const std::string& word);

// Fraction of items whose chosen response outscores the rejected one under
// the policy, conditioned on (x, m_w, c_w); ties count one half.
double preference_accuracy(const ModelParams& policy, std::span<const PreferenceItem> items);

// Scaled report row: text metrics x100, CIDEr-D x100 of its native scale.
struct MetricReport {
  double rouge_l = 0;
  double bleu4 = 0;
  double meteor = 0;
  double cider = 0;
  double pref_acc = 0;
  int n = 0;
  std::string to_json() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

MetricReport build_report(std::span<const Tokens> candidates, std::span<const Tokens> references,
                          double pref_acc, int n);

}  // namespace metrics
}  // namespace mcmdpo
