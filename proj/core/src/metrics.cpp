#include "mcmdpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mcmdpo/text.hpp"

namespace mcmdpo {
namespace metrics {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kRougeBeta = 1.2;
constexpr double kCiderSigma = 6.0;

using Counts = std::map<std::string, double>;

std::string ngram_key(const Tokens& t, size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += t[start + static_cast<size_t>(i)];
  }
  return key;
}

Counts ngram_counts(const Tokens& t, int n) {
  Counts c;
  if (static_cast<int>(t.size()) >= n) {
    for (size_t i = 0; i + static_cast<size_t>(n) <= t.size(); ++i) c[ngram_key(t, i, n)] += 1.0;
  }
  return c;
}

size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

Tokens tokenize(const std::string& text) { return tokenize_words(text); }

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty()) {
    std::cerr << "warning: rouge_l on empty candidate\n";
    return 0.0;
  }
  if (reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.empty() || candidates.size() != references.size()) {
    throw std::invalid_argument("bleu4: corpus lists must be nonempty and aligned");
  }
  double matches[kMaxOrder] = {0, 0, 0, 0};
  double totals[kMaxOrder] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    const Tokens& r = references[i];
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      const Counts cc = ngram_counts(c, n);
      const Counts rc = ngram_counts(r, n);
      for (const auto& [gram, count] : cc) {
        auto it = rc.find(gram);
        if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (cand_len == 0.0) return 0.0;

  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    // Add-one smoothing only where the clipped count is zero.
    const double p = matches[n] > 0.0 ? matches[n] / totals[n]
                                      : (matches[n] + 1.0) / (totals[n] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / kMaxOrder);
}

double cider_d(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.empty() || candidates.size() != references.size()) {
    throw std::invalid_argument("cider_d: corpus lists must be nonempty and aligned");
  }
  const size_t n_docs = references.size();

  // Document frequencies over the reference corpus.
  Counts df[kMaxOrder];
  for (const Tokens& ref : references) {
    for (int n = 1; n <= kMaxOrder; ++n) {
      for (const auto& [gram, unused] : ngram_counts(ref, n)) df[n - 1][gram] += 1.0;
    }
  }
  const double log_docs = std::log(static_cast<double>(n_docs));
  if (n_docs < 2) {
    std::cerr << "warning: cider_d idf degenerates on a corpus of " << n_docs << " document(s)\n";
  }

  auto tfidf = [&](const Tokens& t, int n, double* norm) {
    Counts vec = ngram_counts(t, n);
    double sq = 0.0;
    for (auto& [gram, count] : vec) {
      auto it = df[n - 1].find(gram);
      const double d = it == df[n - 1].end() ? 0.0 : it->second;
      count *= log_docs - std::log(std::max(1.0, d));
      sq += count * count;
    }
    *norm = std::sqrt(sq);
    return vec;
  };

  double score = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double delta =
        static_cast<double>(candidates[i].size()) - static_cast<double>(references[i].size());
    const double length_penalty = std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
    double pair = 0.0;
    for (int n = 1; n <= kMaxOrder; ++n) {
      double cnorm = 0.0, rnorm = 0.0;
      const Counts cvec = tfidf(candidates[i], n, &cnorm);
      const Counts rvec = tfidf(references[i], n, &rnorm);
      if (cnorm == 0.0 || rnorm == 0.0) continue;
      double dot = 0.0;
      for (const auto& [gram, cw] : cvec) {
        auto it = rvec.find(gram);
        if (it != rvec.end()) dot += std::min(cw, it->second) * it->second;
      }
      pair += dot / (cnorm * rnorm) * length_penalty;
    }
    score += pair / kMaxOrder;
  }
  return 10.0 * score / static_cast<double>(candidates.size());
}

std::string stem(const std::string& word) {
  std::string w = word;
  auto ends = [&](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return w.size() > n && w.compare(w.size() - n, n, suffix) == 0;
  };
  auto chop = [&](size_t n) { w.erase(w.size() - n); };

  if (ends("sses")) chop(2);
  else if (ends("ies")) chop(2);
  else if (!ends("ss") && ends("s")) chop(1);

  if (ends("eed")) chop(1);
  else if (ends("ing") && w.size() > 5) chop(3);
  else if (ends("ed") && w.size() > 4) chop(2);

  if (ends("ly") && w.size() > 4) chop(2);
  return w;
}

double meteor_simplified(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) {
    throw std::invalid_argument("meteor_simplified: empty input");
  }

  // match[i] = reference position aligned to candidate position i, or -1.
  std::vector<int> match(candidate.size(), -1);
  std::vector<bool> used(reference.size(), false);
  auto align = [&](auto&& key) {
    for (size_t i = 0; i < candidate.size(); ++i) {
      if (match[i] >= 0) continue;
      for (size_t j = 0; j < reference.size(); ++j) {
        if (!used[j] && key(candidate[i]) == key(reference[j])) {
          match[i] = static_cast<int>(j);
          used[j] = true;
          break;
        }
      }
    }
  };
  align([](const std::string& t) { return t; });
  align([](const std::string& t) { return stem(t); });

  int matches = 0;
  for (int m : match) {
    if (m >= 0) ++matches;
  }
  if (matches == 0) return 0.0;

  const double p = static_cast<double>(matches) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(matches) / static_cast<double>(reference.size());
  const double f = p * r / (0.9 * p + 0.1 * r);

  int chunks = 0;
  int prev_ref = -2;
  for (size_t i = 0; i < candidate.size(); ++i) {
    if (match[i] < 0) {
      prev_ref = -2;
      continue;
    }
    if (match[i] != prev_ref + 1) ++chunks;
    prev_ref = match[i];
  }
  const double frag = static_cast<double>(chunks) / static_cast<double>(matches);
  const double penalty = 0.5 * frag * frag * frag;
  return f * (1.0 - penalty);
}

double preference_accuracy(const ModelParams& policy, std::span<const PreferenceItem> items) {
  if (items.empty()) throw std::invalid_argument("preference_accuracy: no items");
  double score = 0.0;
  for (const PreferenceItem& item : items) {
    const double chosen = sequence_logprob(policy, item.x, item.m_w, item.c_w, item.y_w);
    const double rejected = sequence_logprob(policy, item.x, item.m_w, item.c_w, item.y_l);
    if (chosen > rejected) score += 1.0;
    else if (chosen == rejected) score += 0.5;
  }
  return score / static_cast<double>(items.size());
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["rouge_l"] = rouge_l;
  j["bleu4"] = bleu4;
  j["meteor"] = meteor;
  j["meteor_variant"] = "simplified";
  j["cider"] = cider;
  j["pref_acc"] = pref_acc;
  j["n"] = n;
  return j.dump(2);
}

std::string MetricReport::csv_header() const {
  return "rouge_l,bleu4,meteor_simplified,cider,pref_acc,n";
}

std::string MetricReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << rouge_l << "," << bleu4 << "," << meteor << "," << cider << "," << pref_acc << "," << n;
  return os.str();
}

MetricReport build_report(std::span<const Tokens> candidates, std::span<const Tokens> references,
                          double pref_acc, int n) {
  MetricReport rep;
  double rouge_sum = 0.0, meteor_sum = 0.0;
  size_t scored = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    rouge_sum += rouge_l(candidates[i], references[i]);
    if (!candidates[i].empty() && !references[i].empty()) {
      meteor_sum += meteor_simplified(candidates[i], references[i]);
    }
    ++scored;
  }
  const double inv = scored ? 1.0 / static_cast<double>(scored) : 0.0;
  rep.rouge_l = 100.0 * rouge_sum * inv;
  rep.meteor = 100.0 * meteor_sum * inv;
  rep.bleu4 = 100.0 * bleu4(candidates, references);
  rep.cider = 100.0 * cider_d(candidates, references);
  rep.pref_acc = pref_acc;
  rep.n = n;
  return rep;
}

}  // namespace metrics
}  // namespace mcmdpo
