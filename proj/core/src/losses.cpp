#include "mcmdpo/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mcmdpo {

namespace {

// Conditioning table for one item. Slots 0..7 cover every chosen/rejected
// combination; 8 and 9 are the context-free pair used by the DPO baseline.
constexpr int kCondChosen = 0;
constexpr int kCondBaselineChosen = 8;
constexpr int kCondBaselineRejected = 9;
constexpr int kNumConds = 10;

Conditioning item_conditioning(const PreferenceItem& it, int slot) {
  switch (slot) {
    case 0: return {it.m_w, it.c_w, it.y_w};
    case 1: return {it.m_w, it.c_w, it.y_l};
    case 2: return {it.m_l, it.c_w, it.y_w};
    case 3: return {it.m_w, it.c_l, it.y_w};
    case 4: return {it.m_l, it.c_w, it.y_l};
    case 5: return {it.m_w, it.c_l, it.y_l};
    case 6: return {it.m_l, it.c_l, it.y_w};
    case 7: return {it.m_l, it.c_l, it.y_l};
    case 8: return {it.m_w, empty_context(), it.y_w};
    case 9: return {it.m_w, empty_context(), it.y_l};
  }
  throw std::logic_error("bad conditioning slot");
}

// Rejected-conditioning slot per term; the chosen side is always slot 0.
constexpr std::array<int, kNumTerms> kRejectedSlot = {1, 2, 3, 4, 5, 6, 7};

void check_not_degenerate(const Conditioning& chosen, const Conditioning& rejected,
                          const std::string& where) {
  if (chosen == rejected) {
    throw std::invalid_argument(where + ": degenerate pair (chosen == rejected conditioning)");
  }
}

}  // namespace

void PreferenceItem::validate() const {
  if (y_w.ids == y_l.ids) {
    throw std::invalid_argument("PreferenceItem " + id + ": y_w == y_l");
  }
}

void LossWeights::validate() const {
  if (lambda < 0 || alpha < 0 || gamma < 0) {
    throw std::invalid_argument("LossWeights: weights must be nonnegative");
  }
  if (lambda == 0 && alpha == 0 && gamma == 0) {
    throw std::invalid_argument("LossWeights: at least one of lambda/alpha/gamma must be > 0");
  }
  if (!(beta > 0)) throw std::invalid_argument("LossWeights: beta must be positive");
}

const char* term_name(int term) {
  switch (term) {
    case kRpo: return "rpo";
    case kVpo: return "vpo";
    case kCpo: return "cpo";
    case kVrpo: return "vrpo";
    case kCrpo: return "crpo";
    case kVcpo: return "vcpo";
    case kMtpo: return "mtpo";
  }
  return "?";
}

TermMask TermMask::without(std::initializer_list<int> terms) {
  TermMask m;
  for (int t : terms) m.enabled[static_cast<size_t>(t)] = false;
  return m;
}

double LossBreakdown::term(int index) const { return terms()[static_cast<size_t>(index)]; }

double combine_terms(const std::array<double, kNumTerms>& t, const LossWeights& w,
                     const TermMask& mask) {
  std::array<double, kNumTerms> m = t;
  for (int i = 0; i < kNumTerms; ++i) {
    if (!mask[i]) m[static_cast<size_t>(i)] = 0.0;
  }
  const double single = w.lambda * m[kRpo];
  const double pair = w.alpha * (m[kVpo] + m[kCpo]);
  const double multi = w.gamma * (((m[kVrpo] + m[kCrpo]) + m[kVcpo]) + m[kMtpo]);
  return (single + pair) + multi;
}

ItemRefLogprobs reference_logprobs(const ModelParams& reference, const PreferenceItem& item) {
  ModelGraph mg(reference, {});
  ItemRefLogprobs out;
  for (int slot = 0; slot < kNumConds; ++slot) {
    const Conditioning cond = item_conditioning(item, slot);
    out.values[static_cast<size_t>(slot)] =
        mg.graph().value(mg.sequence_logprob(item.x, cond.m, cond.c, cond.y)).scalar_value();
  }
  return out;
}

PrefMethod parse_method(const std::string& s) {
  if (s == "dpo") return PrefMethod::dpo;
  if (s == "mcm_dpo" || s == "mcm-dpo") return PrefMethod::mcm_dpo;
  throw std::invalid_argument("unknown method '" + s + "' (want dpo or mcm_dpo)");
}

const char* method_name(PrefMethod m) { return m == PrefMethod::dpo ? "dpo" : "mcm_dpo"; }

double reward(const ModelParams& policy, const ModelParams& reference, double beta,
              const TokenSeq& x, const Conditioning& cond) {
  const double lp = sequence_logprob(policy, x, cond.m, cond.c, cond.y);
  const double lr = sequence_logprob(reference, x, cond.m, cond.c, cond.y);
  return beta * (lp - lr);
}

namespace {

double sigmoid_value(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

double neg_log_sigmoid(double delta) { return -std::log(sigmoid_value(delta)); }

// Policy-side loss graph for one item. Logprob nodes are built lazily per
// conditioning slot and shared across terms.
struct ItemNodes {
  std::array<NodeId, kNumConds> logprob{};
  std::array<bool, kNumConds> built{};
};

NodeId logprob_node(ModelGraph& mg, const PreferenceItem& item, ItemNodes& nodes, int slot) {
  if (!nodes.built[static_cast<size_t>(slot)]) {
    const Conditioning cond = item_conditioning(item, slot);
    nodes.logprob[static_cast<size_t>(slot)] =
        mg.sequence_logprob(item.x, cond.m, cond.c, cond.y);
    nodes.built[static_cast<size_t>(slot)] = true;
  }
  return nodes.logprob[static_cast<size_t>(slot)];
}

NodeId reward_node(ModelGraph& mg, const PreferenceItem& item, ItemNodes& nodes, int slot,
                   double ref_logprob, double beta) {
  Graph& g = mg.graph();
  return g.scale(g.sub(logprob_node(mg, item, nodes, slot), g.constant(Tensor::scalar(ref_logprob))),
                 beta);
}

NodeId pref_term_node(ModelGraph& mg, const PreferenceItem& item, ItemNodes& nodes,
                      int chosen_slot, int rejected_slot, const ItemRefLogprobs& ref,
                      double beta, const std::string& where) {
  check_not_degenerate(item_conditioning(item, chosen_slot),
                       item_conditioning(item, rejected_slot), where);
  Graph& g = mg.graph();
  NodeId r_w = reward_node(mg, item, nodes, chosen_slot,
                           ref.values[static_cast<size_t>(chosen_slot)], beta);
  NodeId r_l = reward_node(mg, item, nodes, rejected_slot,
                           ref.values[static_cast<size_t>(rejected_slot)], beta);
  return g.scale(g.log(g.sigmoid(g.sub(r_w, r_l))), -1.0);
}

struct ItemLoss {
  NodeId combined;
  LossBreakdown breakdown;
};

ItemLoss build_item_mcm(ModelGraph& mg, const PreferenceItem& item, const ItemRefLogprobs& ref,
                        const LossWeights& w, const TermMask& mask) {
  item.validate();
  Graph& g = mg.graph();
  ItemNodes nodes;
  std::array<NodeId, kNumTerms> term_nodes;
  for (int t = 0; t < kNumTerms; ++t) {
    term_nodes[static_cast<size_t>(t)] =
        pref_term_node(mg, item, nodes, kCondChosen, kRejectedSlot[static_cast<size_t>(t)], ref,
                       w.beta, std::string("mcm_dpo_loss/") + term_name(t));
  }

  auto masked = [&](int t) {
    return g.scale(term_nodes[static_cast<size_t>(t)], mask[t] ? 1.0 : 0.0);
  };
  NodeId single = g.scale(masked(kRpo), w.lambda);
  NodeId pair = g.scale(g.add(masked(kVpo), masked(kCpo)), w.alpha);
  NodeId multi = g.scale(
      g.add(g.add(g.add(masked(kVrpo), masked(kCrpo)), masked(kVcpo)), masked(kMtpo)), w.gamma);
  NodeId combined = g.add(g.add(single, pair), multi);

  ItemLoss out;
  out.combined = combined;
  std::array<double, kNumTerms> values;
  for (int t = 0; t < kNumTerms; ++t) {
    values[static_cast<size_t>(t)] = g.value(term_nodes[static_cast<size_t>(t)]).scalar_value();
  }
  out.breakdown.rpo = values[kRpo];
  out.breakdown.vpo = values[kVpo];
  out.breakdown.cpo = values[kCpo];
  out.breakdown.vrpo = values[kVrpo];
  out.breakdown.crpo = values[kCrpo];
  out.breakdown.vcpo = values[kVcpo];
  out.breakdown.mtpo = values[kMtpo];
  out.breakdown.combined = combine_terms(values, w, mask);
  return out;
}

ItemLoss build_item_dpo(ModelGraph& mg, const PreferenceItem& item, const ItemRefLogprobs& ref,
                        const LossWeights& w) {
  item.validate();
  ItemNodes nodes;
  ItemLoss out;
  out.combined = pref_term_node(mg, item, nodes, kCondBaselineChosen, kCondBaselineRejected, ref,
                                w.beta, "mdpo_baseline_loss");
  out.breakdown = {};
  out.breakdown.combined = mg.graph().value(out.combined).scalar_value();
  return out;
}

}  // namespace

double pref_term(const ModelParams& policy, const ModelParams& reference, double beta,
                 const TokenSeq& x, const Conditioning& chosen, const Conditioning& rejected) {
  check_not_degenerate(chosen, rejected, "pref_term");
  const double r_w = reward(policy, reference, beta, x, chosen);
  const double r_l = reward(policy, reference, beta, x, rejected);
  return neg_log_sigmoid(r_w - r_l);
}

double mdpo_baseline_loss(const ModelParams& policy, const ModelParams& reference, double beta,
                          const TokenSeq& x, const ImageTensor& m_w, const TokenSeq& y_w,
                          const TokenSeq& y_l) {
  return pref_term(policy, reference, beta, x, Conditioning{m_w, empty_context(), y_w},
                   Conditioning{m_w, empty_context(), y_l});
}

LossBreakdown mcm_dpo_loss(const ModelParams& policy, const ModelParams& reference,
                           const PreferenceItem& item, const LossWeights& weights,
                           const TermMask& mask) {
  weights.validate();
  const ItemRefLogprobs ref = reference_logprobs(reference, item);
  ModelGraph mg(policy, {});
  return build_item_mcm(mg, item, ref, weights, mask).breakdown;
}

LossBreakdown BatchLossResult::mean_breakdown() const {
  LossBreakdown b;
  b.rpo = term_means[kRpo];
  b.vpo = term_means[kVpo];
  b.cpo = term_means[kCpo];
  b.vrpo = term_means[kVrpo];
  b.crpo = term_means[kCrpo];
  b.vcpo = term_means[kVcpo];
  b.mtpo = term_means[kMtpo];
  b.combined = combined_mean;
  return b;
}

BatchLossResult batch_loss(const ModelParams& policy, const ModelParams& reference,
                           std::span<const PreferenceItem> items, const LossWeights& weights,
                           const TermMask& mask) {
  if (items.empty()) throw std::invalid_argument("batch_loss: empty batch");
  weights.validate();
  std::vector<ItemRefLogprobs> refs;
  refs.reserve(items.size());
  for (const PreferenceItem& item : items) refs.push_back(reference_logprobs(reference, item));
  PrefBatchGraph g = build_pref_batch(policy, {}, items, refs, weights, mask,
                                      PrefMethod::mcm_dpo);
  return g.stats();
}

BatchLossResult PrefBatchGraph::stats() const {
  BatchLossResult out;
  out.combined_mean = model_graph.graph().value(root).scalar_value();
  const double inv = 1.0 / static_cast<double>(per_item.size());
  for (int t = 0; t < kNumTerms; ++t) {
    double s = 0.0;
    for (const LossBreakdown& b : per_item) s += b.term(t);
    out.term_means[static_cast<size_t>(t)] = s * inv;
  }
  return out;
}

PrefBatchGraph build_pref_batch(const ModelParams& policy,
                                const std::set<std::string>& trainable,
                                std::span<const PreferenceItem> items,
                                std::span<const ItemRefLogprobs> ref_logprobs,
                                const LossWeights& weights, const TermMask& mask,
                                PrefMethod method) {
  if (items.empty()) throw std::invalid_argument("build_pref_batch: empty batch");
  if (items.size() != ref_logprobs.size()) {
    throw std::invalid_argument("build_pref_batch: items/ref_logprobs size mismatch");
  }
  weights.validate();

  PrefBatchGraph out{ModelGraph(policy, trainable), -1, {}};
  Graph& g = out.model_graph.graph();

  NodeId sum = -1;
  for (size_t i = 0; i < items.size(); ++i) {
    ItemLoss item_loss =
        method == PrefMethod::mcm_dpo
            ? build_item_mcm(out.model_graph, items[i], ref_logprobs[i], weights, mask)
            : build_item_dpo(out.model_graph, items[i], ref_logprobs[i], weights);
    out.per_item.push_back(item_loss.breakdown);
    sum = (sum < 0) ? item_loss.combined : g.add(sum, item_loss.combined);
  }
  out.root = g.scale(sum, 1.0 / static_cast<double>(items.size()));
  return out;
}

SftBatchGraph build_sft_batch(const ModelParams& params, const std::set<std::string>& trainable,
                              std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("build_sft_batch: empty batch");
  SftBatchGraph out{ModelGraph(params, trainable), -1, 0.0};
  Graph& g = out.model_graph.graph();
  NodeId sum = -1;
  for (const SftExample& ex : batch) {
    NodeId nll = g.scale(out.model_graph.sequence_logprob(ex.x, ex.m, ex.c, ex.y), -1.0);
    sum = (sum < 0) ? nll : g.add(sum, nll);
  }
  out.root = g.scale(sum, 1.0 / static_cast<double>(batch.size()));
  out.loss = g.value(out.root).scalar_value();
  return out;
}

}  // namespace mcmdpo
