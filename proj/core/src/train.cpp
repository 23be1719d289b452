#include "mcmdpo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mcmdpo/rng.hpp"
#include "mcmdpo/text.hpp"

namespace mcmdpo {
namespace train {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Deterministic first-order optimizer; parameters update in name order.
class Optimizer {
 public:
  Optimizer(std::string kind, double lr) : kind_(std::move(kind)), lr_(lr) {
    if (kind_ != "adam" && kind_ != "sgd") {
      throw std::invalid_argument("optimizer must be adam or sgd, got '" + kind_ + "'");
    }
  }

  void step(ModelParams& params, const GradientMap& grads,
            const std::set<std::string>& trainable) {
    ++t_;
    for (auto& [name, tensor] : params.tensors) {
      if (!trainable.count(ModelParams::group_of(name))) continue;
      const Tensor* g = grads.find(name);
      if (g == nullptr) continue;
      if (kind_ == "sgd") {
        for (int64_t i = 0; i < tensor.numel(); ++i) tensor[i] -= lr_ * (*g)[i];
        continue;
      }
      auto& [m, v] = state_[name];
      if (m.size() != static_cast<size_t>(tensor.numel())) {
        m.assign(static_cast<size_t>(tensor.numel()), 0.0);
        v.assign(static_cast<size_t>(tensor.numel()), 0.0);
      }
      const double bc1 = 1.0 - std::pow(kBeta1, t_);
      const double bc2 = 1.0 - std::pow(kBeta2, t_);
      for (int64_t i = 0; i < tensor.numel(); ++i) {
        const double gi = (*g)[i];
        m[static_cast<size_t>(i)] = kBeta1 * m[static_cast<size_t>(i)] + (1.0 - kBeta1) * gi;
        v[static_cast<size_t>(i)] = kBeta2 * v[static_cast<size_t>(i)] + (1.0 - kBeta2) * gi * gi;
        const double mhat = m[static_cast<size_t>(i)] / bc1;
        const double vhat = v[static_cast<size_t>(i)] / bc2;
        tensor[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::string kind_;
  double lr_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size,
                                              std::vector<size_t>& order, Rng& rng) {
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, at + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace

TrainConfig TrainConfig::sft_defaults() {
  TrainConfig c;
  c.stage = "sft";
  c.lr = 1e-2;
  c.epochs = 5;
  c.batch_size = 16;
  return c;
}

TrainConfig TrainConfig::pref_defaults() {
  TrainConfig c;
  c.stage = "pref";
  c.lr = 1e-3;
  c.epochs = 5;
  c.batch_size = 8;
  return c;
}

void TrainConfig::apply_preset(const std::string& preset) {
  if (preset == "paper-schedule") {
    if (stage == "sft") {
      epochs = 1;
      lr = 2e-5;
    } else {
      epochs = 3;
      lr = 5e-7;
    }
    return;
  }
  throw std::invalid_argument("unknown preset '" + preset + "'");
}

void TrainConfig::validate() const {
  if (stage != "sft" && stage != "pref") {
    throw std::invalid_argument("TrainConfig: stage must be sft or pref");
  }
  if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (optimizer != "adam" && optimizer != "sgd") {
    throw std::invalid_argument("TrainConfig: optimizer must be adam or sgd");
  }
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  weights.validate();
  parse_paradigm(paradigm);
  if (stage == "pref") parse_method(method);
}

TermMask TrainConfig::mask() const {
  TermMask m;
  m.enabled = term_mask;
  return m;
}

std::string TrainConfig::to_json() const {
  json j;
  j["stage"] = stage;
  j["method"] = method;
  j["paradigm"] = paradigm;
  j["weights"] = {{"lambda", weights.lambda},
                  {"alpha", weights.alpha},
                  {"gamma", weights.gamma},
                  {"beta", weights.beta}};
  j["optimizer"] = optimizer;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["dims"] = {{"patch_size", dims.patch_size},
               {"embed_dim", dims.embed_dim},
               {"hidden_dim", dims.hidden_dim}};
  j["prompt_text"] = prompt_text;
  j["gen_max_len"] = gen_max_len;
  j["train_data"] = train_data;
  j["pref_manifest"] = pref_manifest;
  j["test_data"] = test_data;
  j["vocab_path"] = vocab_path;
  j["checkpoint_in"] = checkpoint_in;
  j["checkpoint_out"] = checkpoint_out;
  j["report_path"] = report_path;
  j["deterministic_report"] = deterministic_report;
  j["term_mask"] = term_mask;
  return j.dump();
}

void TrainConfig::load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("TrainConfig: cannot open config file " + path);
  json j;
  in >> j;
  auto str = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  str("stage", stage);
  str("method", method);
  str("paradigm", paradigm);
  str("prompt_text", prompt_text);
  str("optimizer", optimizer);
  str("train_data", train_data);
  str("pref_manifest", pref_manifest);
  str("test_data", test_data);
  str("vocab_path", vocab_path);
  str("checkpoint_in", checkpoint_in);
  str("checkpoint_out", checkpoint_out);
  str("report_path", report_path);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    if (w.contains("lambda")) weights.lambda = w.at("lambda").get<double>();
    if (w.contains("alpha")) weights.alpha = w.at("alpha").get<double>();
    if (w.contains("gamma")) weights.gamma = w.at("gamma").get<double>();
    if (w.contains("beta")) weights.beta = w.at("beta").get<double>();
  }
  if (j.contains("lr")) lr = j.at("lr").get<double>();
  if (j.contains("epochs")) epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) batch_size = j.at("batch_size").get<int>();
  if (j.contains("seed")) seed = j.at("seed").get<uint64_t>();
  if (j.contains("gen_max_len")) gen_max_len = j.at("gen_max_len").get<int>();
  if (j.contains("deterministic_report")) {
    deterministic_report = j.at("deterministic_report").get<bool>();
  }
  if (j.contains("dims")) {
    const json& d = j.at("dims");
    if (d.contains("patch_size")) dims.patch_size = d.at("patch_size").get<int>();
    if (d.contains("embed_dim")) dims.embed_dim = d.at("embed_dim").get<int>();
    if (d.contains("hidden_dim")) dims.hidden_dim = d.at("hidden_dim").get<int>();
  }
  if (j.contains("term_mask")) {
    const auto mask_values = j.at("term_mask").get<std::vector<bool>>();
    if (mask_values.size() != kNumTerms) {
      throw std::invalid_argument("TrainConfig: term_mask needs exactly 7 entries");
    }
    for (size_t i = 0; i < mask_values.size(); ++i) term_mask[i] = mask_values[i];
  }
}

std::string TrainConfig::hash() const {
  std::ostringstream os;
  os << std::hex << fnv1a(to_json() + "|mcmdpo-0.1.0");
  return os.str();
}

std::string RunReport::to_json(bool deterministic) const {
  json j;
  j["stage"] = stage;
  j["config"] = json::parse(config_echo);
  j["config_hash"] = config_hash;
  if (initial_loss) j["initial_loss"] = *initial_loss;
  json epochs_json = json::array();
  for (const EpochStats& e : epochs) {
    json ej;
    ej["epoch"] = e.epoch;
    ej["loss"] = e.loss;
    ej["terms"] = e.term_means;
    epochs_json.push_back(ej);
  }
  j["epochs"] = epochs_json;
  if (final_metrics) j["final_metrics"] = json::parse(final_metrics->to_json());
  j["wall_time_seconds"] = deterministic ? 0.0 : wall_time_seconds;
  return j.dump(2);
}

void RunReport::save(const std::string& path, bool deterministic) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("RunReport: cannot write " + path);
  out << to_json(deterministic) << "\n";
}

void RunReport::validate(int configured_epochs) const {
  if (static_cast<int>(epochs.size()) != configured_epochs) {
    throw std::logic_error("RunReport: epoch count mismatch");
  }
  auto finite = [](double v) {
    if (!std::isfinite(v)) throw std::logic_error("RunReport: non-finite value");
  };
  for (const EpochStats& e : epochs) {
    finite(e.loss);
    for (const auto& [k, v] : e.term_means) finite(v);
  }
  if (initial_loss) finite(*initial_loss);
  finite(wall_time_seconds);
}

ModelParams train_sft(ModelParams params, std::span<const SftExample> data,
                      const TrainConfig& config, RunReport* report) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train_sft: no training data");
  const std::set<std::string> trainable =
      trainable_groups(config.paradigm_enum(), Stage::S1);

  Rng shuffle_rng(derive_seed(config.seed, "sft-shuffle"));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Optimizer opt(config.optimizer, config.lr);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const std::vector<size_t>& batch_ids :
         make_batches(data.size(), config.batch_size, order, shuffle_rng)) {
      std::vector<SftExample> batch;
      batch.reserve(batch_ids.size());
      for (size_t idx : batch_ids) batch.push_back(data[idx]);

      SftBatchGraph bg = build_sft_batch(params, trainable, batch);
      const GradientMap grads = bg.model_graph.graph().backward(bg.root);
      opt.step(params, grads, trainable);
      loss_sum += bg.loss * static_cast<double>(batch.size());
    }
    if (report) {
      report->epochs.push_back({epoch, loss_sum / static_cast<double>(data.size()), {}});
    }
  }
  return params;
}

namespace {

double full_set_pref_loss(const ModelParams& policy,
                          std::span<const PreferenceItem> items,
                          std::span<const ItemRefLogprobs> refs, const TrainConfig& config) {
  double sum = 0.0;
  const size_t chunk = 16;
  for (size_t at = 0; at < items.size(); at += chunk) {
    const size_t end = std::min(items.size(), at + chunk);
    PrefBatchGraph bg = build_pref_batch(
        policy, {}, items.subspan(at, end - at), refs.subspan(at, end - at), config.weights,
        config.mask(), config.method_enum());
    sum += bg.stats().combined_mean * static_cast<double>(end - at);
  }
  return sum / static_cast<double>(items.size());
}

}  // namespace

ModelParams train_pref(ModelParams policy, const ModelParams& reference,
                       std::span<const PreferenceItem> items, const TrainConfig& config,
                       RunReport* report) {
  config.validate();
  if (items.empty()) throw std::invalid_argument("train_pref: no preference items");
  const std::set<std::string> trainable =
      trainable_groups(config.paradigm_enum(), Stage::S2);
  const PrefMethod method = config.method_enum();
  const TermMask mask = config.mask();

  // The reference is frozen, so its per-conditioning log-probs are fixed
  // for the whole stage.
  std::vector<ItemRefLogprobs> refs;
  refs.reserve(items.size());
  for (const PreferenceItem& item : items) refs.push_back(reference_logprobs(reference, item));

  if (report) {
    report->initial_loss = full_set_pref_loss(policy, items, refs, config);
  }

  Rng shuffle_rng(derive_seed(config.seed, "pref-shuffle"));
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Optimizer opt(config.optimizer, config.lr);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::array<double, kNumTerms> term_sums = {};
    for (const std::vector<size_t>& batch_ids :
         make_batches(items.size(), config.batch_size, order, shuffle_rng)) {
      std::vector<PreferenceItem> batch;
      std::vector<ItemRefLogprobs> batch_refs;
      batch.reserve(batch_ids.size());
      for (size_t idx : batch_ids) {
        batch.push_back(items[idx]);
        batch_refs.push_back(refs[idx]);
      }

      PrefBatchGraph bg = build_pref_batch(policy, trainable, batch, batch_refs, config.weights,
                                           mask, method);
      const BatchLossResult stats = bg.stats();
      const GradientMap grads = bg.model_graph.graph().backward(bg.root);
      opt.step(policy, grads, trainable);

      loss_sum += stats.combined_mean * static_cast<double>(batch.size());
      for (int t = 0; t < kNumTerms; ++t) {
        term_sums[static_cast<size_t>(t)] +=
            stats.term_means[static_cast<size_t>(t)] * static_cast<double>(batch.size());
      }
    }
    if (report) {
      EpochStats stats;
      stats.epoch = epoch;
      stats.loss = loss_sum / static_cast<double>(items.size());
      if (method == PrefMethod::mcm_dpo) {
        for (int t = 0; t < kNumTerms; ++t) {
          stats.term_means[term_name(t)] =
              term_sums[static_cast<size_t>(t)] / static_cast<double>(items.size());
        }
      }
      report->epochs.push_back(std::move(stats));
    }
  }
  return policy;
}

std::vector<SftExample> to_sft_examples(std::span<const pipeline::RawPost> posts,
                                        const Vocabulary& vocab, const std::string& prompt_text) {
  std::vector<SftExample> out;
  out.reserve(posts.size());
  const TokenSeq prompt = vocab.encode(prompt_text, Role::prompt);
  for (const pipeline::RawPost& post : posts) {
    SftExample ex;
    ex.id = post.id;
    ex.x = prompt;
    ex.c = vocab.encode(post.post_text, Role::context);
    ex.y = vocab.encode(post.alt_text, Role::response);
    ex.m = post.image;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<pipeline::RawPost> to_raw_posts(std::span<const synth::SynthSample> samples) {
  std::vector<pipeline::RawPost> out;
  out.reserve(samples.size());
  for (const synth::SynthSample& s : samples) {
    pipeline::RawPost post;
    post.id = s.id;
    post.image = s.image;
    post.post_text = s.context;
    post.alt_text = s.alt_text;
    post.media_kind = pipeline::MediaKind::static_image;
    post.rejected_alt_text = s.rejected_alt_text;
    out.push_back(std::move(post));
  }
  return out;
}

EvalOutput evaluate_model(const ModelParams& params, const Vocabulary& vocab,
                          std::span<const pipeline::RawPost> test_set,
                          const std::string& prompt_text, int gen_max_len) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_model: empty test set");
  const TokenSeq prompt = vocab.encode(prompt_text, Role::prompt);

  EvalOutput out;
  std::vector<metrics::Tokens> candidates, references;
  std::vector<PreferenceItem> pref_items;
  for (const pipeline::RawPost& post : test_set) {
    const TokenSeq context = vocab.encode(post.post_text, Role::context);
    const int n_patches = (post.image.h / params.dims.patch_size) *
                          (post.image.w / params.dims.patch_size);
    const int budget = params.vocab.max_seq_len - n_patches -
                       static_cast<int>(prompt.ids.size()) -
                       static_cast<int>(context.ids.size()) - 1;
    const TokenSeq generated =
        generate(params, prompt, post.image, context, std::min(gen_max_len, budget));
    const std::string text = vocab.decode(generated.ids);
    out.generations.emplace_back(post.id, text);
    candidates.push_back(metrics::tokenize(text));
    references.push_back(metrics::tokenize(post.alt_text));

    if (!post.rejected_alt_text.empty()) {
      PreferenceItem item;
      item.id = post.id;
      item.x = prompt;
      item.m_w = post.image;
      item.m_l = post.image;
      item.c_w = context;
      item.c_l = context;
      item.y_w = vocab.encode(post.alt_text, Role::response);
      item.y_l = vocab.encode(post.rejected_alt_text, Role::response);
      pref_items.push_back(std::move(item));
    }
  }

  double pref_acc = 0.0;
  if (!pref_items.empty()) {
    pref_acc = metrics::preference_accuracy(params, pref_items);
  } else {
    std::cerr << "evaluate_model: no rejected_alt_text fields; pref_acc reported as 0\n";
  }
  out.report = metrics::build_report(candidates, references, pref_acc,
                                     static_cast<int>(test_set.size()));
  return out;
}

namespace {

Vocabulary load_vocab_checked(const TrainConfig& config) {
  if (config.vocab_path.empty()) throw std::invalid_argument("config: vocab_path required");
  return Vocabulary::load(config.vocab_path);
}

void check_vocab_compat(const Checkpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.vocab_hash != 0 && ckpt.vocab_hash != vocab.fingerprint()) {
    throw std::runtime_error("checkpoint/vocabulary mismatch: the checkpoint was trained with a "
                             "different vocabulary file");
  }
  if (ckpt.params.vocab.vocab_size != vocab.config().vocab_size) {
    throw std::runtime_error("checkpoint vocab_size " +
                             std::to_string(ckpt.params.vocab.vocab_size) +
                             " != vocabulary size " +
                             std::to_string(vocab.config().vocab_size));
  }
}

std::vector<PreferenceItem> manifest_items(const pipeline::PreferenceManifest& manifest,
                                           const Vocabulary& vocab) {
  std::vector<PreferenceItem> items;
  items.reserve(manifest.items.size());
  for (const pipeline::ManifestItem& mi : manifest.items) {
    for (const TokenSeq* seq : {&mi.item.x, &mi.item.c_w, &mi.item.c_l, &mi.item.y_w,
                                &mi.item.y_l}) {
      for (int id : seq->ids) {
        if (id < 0 || id >= vocab.config().vocab_size) {
          throw std::runtime_error("manifest item " + mi.item.id + ": token id " +
                                   std::to_string(id) + " outside vocabulary");
        }
      }
    }
    if (mi.item.y_l.empty()) {
      throw std::runtime_error("manifest item " + mi.item.id + ": missing rejected response");
    }
    items.push_back(mi.item);
  }
  return items;
}

}  // namespace

RunReport run_sft(const TrainConfig& config) {
  const auto start = Clock::now();
  config.validate();
  const Vocabulary vocab = load_vocab_checked(config);
  if (config.train_data.empty()) throw std::invalid_argument("run_sft: train_data required");

  const pipeline::IngestResult ingested = pipeline::ingest(config.train_data);
  // Any vocabulary mismatch throws here, before training starts.
  const std::vector<SftExample> examples =
      to_sft_examples(ingested.posts, vocab, config.prompt_text);

  ModelParams params = ModelParams::init(vocab.config(), config.dims, config.seed);

  RunReport report;
  report.stage = "sft";
  report.config_echo = config.to_json();
  report.config_hash = config.hash();
  params = train_sft(std::move(params), examples, config, &report);

  if (!config.checkpoint_out.empty()) {
    save_checkpoint(params, config.checkpoint_out, vocab.fingerprint());
  }
  report.wall_time_seconds = seconds_since(start);
  report.validate(config.epochs);
  if (!config.report_path.empty()) report.save(config.report_path, config.deterministic_report);
  return report;
}

RunReport run_pref(const TrainConfig& config) {
  const auto start = Clock::now();
  config.validate();
  const Vocabulary vocab = load_vocab_checked(config);
  if (config.checkpoint_in.empty()) throw std::invalid_argument("run_pref: checkpoint_in required");
  if (config.pref_manifest.empty()) {
    throw std::invalid_argument("run_pref: pref_manifest required");
  }

  const Checkpoint ckpt = load_checkpoint(config.checkpoint_in);
  check_vocab_compat(ckpt, vocab);
  const pipeline::PreferenceManifest manifest = pipeline::read_manifest(config.pref_manifest);
  const std::vector<PreferenceItem> items = manifest_items(manifest, vocab);

  RunReport report;
  report.stage = "pref";
  report.config_echo = config.to_json();
  report.config_hash = config.hash();

  // The SFT weights serve as both the starting policy and the frozen
  // reference.
  ModelParams policy = train_pref(ckpt.params, ckpt.params, items, config, &report);

  if (!config.checkpoint_out.empty()) {
    save_checkpoint(policy, config.checkpoint_out, vocab.fingerprint());
  }
  report.wall_time_seconds = seconds_since(start);
  report.validate(config.epochs);
  if (!config.report_path.empty()) report.save(config.report_path, config.deterministic_report);
  return report;
}

metrics::MetricReport run_eval(const TrainConfig& config, const std::string& out_json,
                               const std::string& out_csv) {
  const Vocabulary vocab = load_vocab_checked(config);
  if (config.checkpoint_in.empty()) throw std::invalid_argument("run_eval: checkpoint_in required");
  if (config.test_data.empty()) throw std::invalid_argument("run_eval: test_data required");

  const Checkpoint ckpt = load_checkpoint(config.checkpoint_in);
  check_vocab_compat(ckpt, vocab);
  const pipeline::IngestResult ingested = pipeline::ingest(config.test_data);

  const EvalOutput eval =
      evaluate_model(ckpt.params, vocab, ingested.posts, config.prompt_text, config.gen_max_len);

  if (!out_json.empty()) {
    std::ofstream out(out_json);
    if (!out) throw std::runtime_error("run_eval: cannot write " + out_json);
    out << eval.report.to_json() << "\n";
  }
  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("run_eval: cannot write " + out_csv);
    out << eval.report.csv_header() << "\n" << eval.report.csv_row() << "\n";
  }
  return eval.report;
}

TermMask parse_ablation(const std::string& spec) {
  if (spec == "full") return TermMask::all();
  if (spec.empty() || spec[0] != '-') {
    throw std::invalid_argument("ablation spec must be 'full' or start with '-': " + spec);
  }
  TermMask mask;
  auto disable_group = [&](const std::string& name) {
    const std::string n = lowercase(name);
    if (n == "single") {
      mask.enabled[kRpo] = mask.enabled[kVpo] = mask.enabled[kCpo] = false;
    } else if (n == "pair") {
      mask.enabled[kVrpo] = mask.enabled[kCrpo] = mask.enabled[kVcpo] = false;
    } else if (n == "multi") {
      mask.enabled[kMtpo] = false;
    } else {
      bool found = false;
      for (int t = 0; t < kNumTerms; ++t) {
        if (n == term_name(t)) {
          mask.enabled[static_cast<size_t>(t)] = false;
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("unknown ablation group '" + name + "'");
    }
  };

  std::string current;
  for (size_t i = 1; i <= spec.size(); ++i) {
    if (i == spec.size() || spec[i] == '+' || spec[i] == '-') {
      if (!current.empty()) disable_group(current);
      current.clear();
    } else {
      current += spec[i];
    }
  }
  return mask;
}

std::vector<SweepRow> run_sweep(const std::string& kind, const std::vector<std::string>& grid,
                                const TrainConfig& base, const std::string& pref_raw_data,
                                const std::string& out_csv) {
  if (grid.empty()) throw std::invalid_argument("run_sweep: empty grid");
  const Vocabulary vocab = load_vocab_checked(base);
  if (base.checkpoint_in.empty()) throw std::invalid_argument("run_sweep: checkpoint_in required");
  const Checkpoint ckpt = load_checkpoint(base.checkpoint_in);
  check_vocab_compat(ckpt, vocab);
  if (base.test_data.empty()) throw std::invalid_argument("run_sweep: test_data required");
  const pipeline::IngestResult test_set = pipeline::ingest(base.test_data);

  // Raw preference split, needed when the grid rebuilds rejected images.
  std::vector<pipeline::RawPost> raw_pref;
  if (kind == "noise_T" || kind == "strategy") {
    if (pref_raw_data.empty()) {
      throw std::invalid_argument("run_sweep: " + kind + " sweep needs the raw preference data");
    }
    raw_pref = pipeline::ingest(pref_raw_data).posts;
  }

  std::vector<SweepRow> rows;
  for (const std::string& value : grid) {
    TrainConfig cfg = base;
    cfg.stage = "pref";
    cfg.checkpoint_out.clear();
    cfg.report_path.clear();

    std::vector<PreferenceItem> items;
    if (kind == "gamma") {
      cfg.weights.gamma = std::stod(value);
      if (base.pref_manifest.empty()) {
        throw std::invalid_argument("run_sweep: gamma sweep needs pref_manifest");
      }
      items = manifest_items(pipeline::read_manifest(base.pref_manifest), vocab);
    } else if (kind == "ablation") {
      cfg.term_mask = parse_ablation(value).enabled;
      if (base.pref_manifest.empty()) {
        throw std::invalid_argument("run_sweep: ablation sweep needs pref_manifest");
      }
      items = manifest_items(pipeline::read_manifest(base.pref_manifest), vocab);
    } else if (kind == "noise_T" || kind == "strategy") {
      pipeline::PipelineConfig pc;
      pc.image_strategy = kind == "noise_T"
                              ? RejectImageStrategy::diffusion(std::stoi(value))
                              : RejectImageStrategy::parse(value);
      pc.seed = base.seed;
      pc.prompt_text = base.prompt_text;
      ReferenceJudge judge;
      pipeline::PipelineClients clients;
      clients.judge = &judge;
      const pipeline::PreferenceManifest manifest =
          pipeline::build_preference_manifest(raw_pref, vocab, pc, clients);
      items = manifest_items(manifest, vocab);
    } else {
      throw std::invalid_argument("run_sweep: unknown kind '" + kind + "'");
    }

    RunReport report;
    report.stage = "pref";
    report.config_echo = cfg.to_json();
    report.config_hash = cfg.hash();
    const ModelParams tuned = train_pref(ckpt.params, ckpt.params, items, cfg, &report);
    const EvalOutput eval =
        evaluate_model(tuned, vocab, test_set.posts, cfg.prompt_text, cfg.gen_max_len);
    rows.push_back({value, eval.report});
    std::cerr << "sweep " << kind << "=" << value << ": pref_acc=" << eval.report.pref_acc
              << " rouge_l=" << eval.report.rouge_l << "\n";
  }

  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("run_sweep: cannot write " + out_csv);
    out << kind << "," << rows.front().report.csv_header() << "\n";
    for (const SweepRow& row : rows) out << row.key << "," << row.report.csv_row() << "\n";
  }
  return rows;
}

namespace {

// Top-2 principal directions by power iteration with deflation.
struct Pca2 {
  std::vector<double> pc1, pc2;
  double var1 = 0, var2 = 0;
  bool rank_deficient = false;
};

Pca2 top2_components(const std::vector<std::vector<double>>& centered, int dim) {
  std::vector<std::vector<double>> cov(static_cast<size_t>(dim),
                                       std::vector<double>(static_cast<size_t>(dim), 0.0));
  for (const std::vector<double>& row : centered) {
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        cov[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
            row[static_cast<size_t>(i)] * row[static_cast<size_t>(j)];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(centered.size());
  for (auto& r : cov) {
    for (double& v : r) v *= inv_n;
  }

  Pca2 out;
  auto power_iterate = [&](std::vector<double>& v, double* eigval) {
    for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i)] = 1.0 + 0.01 * i;
    auto normalize = [&](std::vector<double>& u) {
      double n = 0;
      for (double x : u) n += x * x;
      n = std::sqrt(n);
      if (n > 0) {
        for (double& x : u) x /= n;
      }
      return n;
    };
    normalize(v);
    for (int iter = 0; iter < 100; ++iter) {
      std::vector<double> next(static_cast<size_t>(dim), 0.0);
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
          next[static_cast<size_t>(i)] +=
              cov[static_cast<size_t>(i)][static_cast<size_t>(j)] * v[static_cast<size_t>(j)];
        }
      }
      if (normalize(next) == 0.0) {
        *eigval = 0.0;
        return false;  // null direction: rank deficient
      }
      double delta = 0.0;
      for (int i = 0; i < dim; ++i) {
        delta += std::fabs(next[static_cast<size_t>(i)] - v[static_cast<size_t>(i)]);
      }
      v = next;
      if (delta < 1e-9) break;
    }
    double quad = 0.0;
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        quad += v[static_cast<size_t>(i)] * cov[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                v[static_cast<size_t>(j)];
      }
    }
    *eigval = quad;
    return quad > 1e-12;
  };

  out.pc1.assign(static_cast<size_t>(dim), 0.0);
  out.pc2.assign(static_cast<size_t>(dim), 0.0);
  if (!power_iterate(out.pc1, &out.var1)) {
    out.rank_deficient = true;
    out.pc1.assign(static_cast<size_t>(dim), 0.0);
    return out;
  }
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      cov[static_cast<size_t>(i)][static_cast<size_t>(j)] -=
          out.var1 * out.pc1[static_cast<size_t>(i)] * out.pc1[static_cast<size_t>(j)];
    }
  }
  if (!power_iterate(out.pc2, &out.var2)) {
    out.rank_deficient = true;
    out.pc2.assign(static_cast<size_t>(dim), 0.0);
    out.var2 = 0.0;
  }
  return out;
}

}  // namespace

void export_embeddings(const ModelParams& params, const Vocabulary& vocab,
                       std::span<const pipeline::RawPost> samples, const std::string& prompt_text,
                       int gen_max_len, const std::string& out_csv) {
  if (samples.size() < 3) {
    throw std::invalid_argument("export_embeddings: need at least 3 samples");
  }
  const TokenSeq prompt = vocab.encode(prompt_text, Role::prompt);
  const int dim = params.dims.embed_dim;

  struct Point {
    std::string id;
    std::string kind;
    std::vector<double> hidden;
  };
  std::vector<Point> points;

  auto final_hidden = [&](const ImageTensor& m, const TokenSeq& c, const TokenSeq& y) {
    ModelGraph mg(params, {});
    const Tensor h = mg.graph().value(mg.final_hidden(prompt, m, c, y));
    return h.data();
  };

  for (const pipeline::RawPost& post : samples) {
    const TokenSeq context = vocab.encode(post.post_text, Role::context);
    const TokenSeq gold = vocab.encode(post.alt_text, Role::response);
    const int n_patches = (post.image.h / params.dims.patch_size) *
                          (post.image.w / params.dims.patch_size);
    const int budget = params.vocab.max_seq_len - n_patches -
                       static_cast<int>(prompt.ids.size()) -
                       static_cast<int>(context.ids.size()) - 1;
    const TokenSeq generated =
        generate(params, prompt, post.image, context, std::min(gen_max_len, budget));
    points.push_back({post.id, "generated", final_hidden(post.image, context, generated)});
    points.push_back({post.id, "gold", final_hidden(post.image, context, gold)});
  }

  // Mean-center, then project onto the top-2 principal components.
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  for (const Point& p : points) {
    for (int i = 0; i < dim; ++i) mean[static_cast<size_t>(i)] += p.hidden[static_cast<size_t>(i)];
  }
  for (double& v : mean) v /= static_cast<double>(points.size());
  std::vector<std::vector<double>> centered;
  centered.reserve(points.size());
  for (const Point& p : points) {
    std::vector<double> row(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) {
      row[static_cast<size_t>(i)] =
          p.hidden[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
    }
    centered.push_back(std::move(row));
  }

  const Pca2 pca = top2_components(centered, dim);
  if (pca.rank_deficient) {
    std::cerr << "export_embeddings: covariance is rank deficient; missing components are "
                 "written as zeros\n";
  }

  std::ofstream out(out_csv);
  if (!out) throw std::runtime_error("export_embeddings: cannot write " + out_csv);
  out << "id,kind,pc1,pc2\n";
  out.precision(17);
  for (size_t p = 0; p < points.size(); ++p) {
    double pc1 = 0, pc2 = 0;
    for (int i = 0; i < dim; ++i) {
      pc1 += centered[p][static_cast<size_t>(i)] * pca.pc1[static_cast<size_t>(i)];
      pc2 += centered[p][static_cast<size_t>(i)] * pca.pc2[static_cast<size_t>(i)];
    }
    out << points[p].id << "," << points[p].kind << "," << pc1 << "," << pc2 << "\n";
  }
}

}  // namespace train
}  // namespace mcmdpo
