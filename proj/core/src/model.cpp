#include "mcmdpo/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mcmdpo/rng.hpp"

namespace mcmdpo {

namespace {

constexpr double kMaskedScore = -1e9;

// Segment-type embedding rows.
constexpr int64_t kSegVisual = 0;
constexpr int64_t kSegPrompt = 1;
constexpr int64_t kSegContext = 2;
constexpr int64_t kSegResponse = 3;

// Fixed parameter creation order; initialization and fingerprints depend
// on it. The core stacks two attention blocks.
const std::vector<std::string>& param_order() {
  static const std::vector<std::string> order = {
      "vision_encoder.weight", "vision_encoder.bias",
      "projector.weight",      "projector.bias",
      "text_embed.token",      "text_embed.position",
      "text_embed.segment",    "lm_core.block0.wq",
      "lm_core.block0.bq",     "lm_core.block0.wk",
      "lm_core.block0.bk",     "lm_core.block0.wv",
      "lm_core.block0.bv",     "lm_core.block0.wo",
      "lm_core.block0.bo",     "lm_core.block1.wq",
      "lm_core.block1.bq",     "lm_core.block1.wk",
      "lm_core.block1.bk",     "lm_core.block1.wv",
      "lm_core.block1.bv",     "lm_core.block1.wo",
      "lm_core.block1.bo",     "lm_head.weight",
      "lm_head.bias",
  };
  return order;
}

void validate_response(const TokenSeq& y, const VocabConfig& vocab) {
  if (y.empty()) throw std::invalid_argument("model: empty response");
  for (int id : y.ids) {
    if (id < 0 || id >= vocab.vocab_size) {
      throw std::invalid_argument("model: response token id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(vocab.vocab_size));
    }
    if (id == vocab.pad_id) throw std::invalid_argument("model: PAD inside response");
  }
  if (y.ids.back() != vocab.eos_id) {
    throw std::invalid_argument("model: response does not end with EOS");
  }
  for (size_t i = 0; i + 1 < y.ids.size(); ++i) {
    if (y.ids[i] == vocab.eos_id) throw std::invalid_argument("model: EOS inside response");
  }
}

}  // namespace

std::vector<int> clean_conditioning(const TokenSeq& seq, const VocabConfig& vocab) {
  std::vector<int> out;
  for (int id : seq.ids) {
    if (id < 0 || id >= vocab.vocab_size) {
      throw std::invalid_argument("model: conditioning token id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(vocab.vocab_size));
    }
    if (id == vocab.pad_id) continue;
    out.push_back(id);
    if (id == vocab.eos_id) break;
  }
  return out;
}

const std::array<std::string, 5>& ModelParams::group_names() {
  static const std::array<std::string, 5> names = {"vision_encoder", "projector", "text_embed",
                                                   "lm_core", "lm_head"};
  return names;
}

std::string ModelParams::group_of(const std::string& param_name) {
  const size_t dot = param_name.find('.');
  if (dot == std::string::npos) {
    throw std::invalid_argument("ModelParams: parameter '" + param_name + "' has no group");
  }
  const std::string group = param_name.substr(0, dot);
  for (const std::string& g : group_names()) {
    if (g == group) return group;
  }
  throw std::invalid_argument("ModelParams: unknown group '" + group + "'");
}

std::map<std::string, std::vector<int64_t>> ModelParams::expected_shapes(
    const VocabConfig& vocab, const ModelDims& dims) {
  const int64_t d = dims.embed_dim;
  const int64_t hdim = dims.hidden_dim;
  const int64_t v = vocab.vocab_size;
  const int64_t s = vocab.max_seq_len;
  std::map<std::string, std::vector<int64_t>> shapes = {
      {"vision_encoder.weight", {1, d}},
      {"vision_encoder.bias", {1, d}},
      {"projector.weight", {d, d}},
      {"projector.bias", {1, d}},
      {"text_embed.token", {v, d}},
      {"text_embed.position", {s, d}},
      {"text_embed.segment", {4, d}},
      {"lm_head.weight", {d, v}},
      {"lm_head.bias", {1, v}},
  };
  for (const char* block : {"lm_core.block0.", "lm_core.block1."}) {
    shapes[std::string(block) + "wq"] = {d, hdim};
    shapes[std::string(block) + "bq"] = {1, hdim};
    shapes[std::string(block) + "wk"] = {d, hdim};
    shapes[std::string(block) + "bk"] = {1, hdim};
    shapes[std::string(block) + "wv"] = {d, hdim};
    shapes[std::string(block) + "bv"] = {1, hdim};
    shapes[std::string(block) + "wo"] = {hdim, d};
    shapes[std::string(block) + "bo"] = {1, d};
  }
  return shapes;
}

ModelParams ModelParams::init(const VocabConfig& vocab, const ModelDims& dims, uint64_t seed) {
  vocab.validate();
  if (dims.patch_size <= 0 || dims.embed_dim <= 0 || dims.hidden_dim <= 0) {
    throw std::invalid_argument("ModelParams: non-positive dimensions");
  }
  ModelParams p;
  p.vocab = vocab;
  p.dims = dims;
  const auto shapes = expected_shapes(vocab, dims);
  Rng rng(seed);
  for (const std::string& name : param_order()) {
    const auto& shape = shapes.at(name);
    int64_t n = 1;
    for (int64_t dim : shape) n *= dim;
    std::vector<double> values(static_cast<size_t>(n));
    for (double& v : values) v = rng.uniform(-0.08, 0.08);
    p.tensors.emplace(name, Tensor(shape, std::move(values)));
  }
  return p;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("ModelParams: no parameter '" + name + "'");
  }
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("ModelParams: no parameter '" + name + "'");
  }
  return it->second;
}

void ModelParams::validate() const {
  vocab.validate();
  const auto shapes = expected_shapes(vocab, dims);
  if (tensors.size() != shapes.size()) {
    throw std::invalid_argument("ModelParams: expected " + std::to_string(shapes.size()) +
                                " tensors, got " + std::to_string(tensors.size()));
  }
  for (const auto& [name, shape] : shapes) {
    const Tensor& t = at(name);
    if (t.shape() != shape) {
      throw std::invalid_argument("ModelParams: " + name + " has shape " + t.shape_str() +
                                  ", expected " + shape_to_string(shape));
    }
    group_of(name);  // throws on unknown group
  }
}

uint64_t ModelParams::fingerprint() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name, h);
    h = fnv1a(t.data().data(), t.data().size() * sizeof(double), h);
  }
  return h;
}

Paradigm parse_paradigm(const std::string& s) {
  if (s == "P1" || s == "p1") return Paradigm::P1;
  if (s == "P2" || s == "p2") return Paradigm::P2;
  if (s == "P3" || s == "p3") return Paradigm::P3;
  if (s == "P4" || s == "p4") return Paradigm::P4;
  throw std::invalid_argument("unknown paradigm '" + s + "' (want P1..P4)");
}

const char* paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::P1: return "P1";
    case Paradigm::P2: return "P2";
    case Paradigm::P3: return "P3";
    case Paradigm::P4: return "P4";
  }
  return "?";
}

const char* stage_name(Stage s) { return s == Stage::S1 ? "S1" : "S2"; }

std::set<std::string> trainable_groups(Paradigm paradigm, Stage stage) {
  std::set<std::string> groups = {"projector", "text_embed", "lm_core", "lm_head"};
  const bool vision_trains = (paradigm == Paradigm::P4) ||
                             (paradigm == Paradigm::P2 && stage == Stage::S2) ||
                             (paradigm == Paradigm::P3 && stage == Stage::S1);
  if (vision_trains) groups.insert("vision_encoder");
  return groups;
}

ModelGraph::ModelGraph(const ModelParams& params, const std::set<std::string>& trainable)
    : params_(&params) {
  params.validate();
  for (const auto& [name, tensor] : params.tensors) {
    const std::string group = ModelParams::group_of(name);
    bindings_[name] = trainable.count(group) ? graph_.parameter(name, tensor)
                                             : graph_.constant(tensor);
  }
}

ModelGraph::ModelGraph(const ModelParams& params)
    : ModelGraph(params, {ModelParams::group_names().begin(), ModelParams::group_names().end()}) {}

NodeId ModelGraph::bound(const std::string& name) { return bindings_.at(name); }

NodeId ModelGraph::visual_embeddings(const ImageTensor& m) {
  m.validate();
  const int patch = params_->dims.patch_size;
  if (m.h % patch != 0 || m.w % patch != 0) {
    throw std::invalid_argument("model: image " + std::to_string(m.h) + "x" +
                                std::to_string(m.w) + " not divisible by patch size " +
                                std::to_string(patch));
  }
  const int ph = m.h / patch;
  const int pw = m.w / patch;
  const int64_t n_patches = static_cast<int64_t>(ph) * pw;

  // Channel-and-pixel mean pool per patch; a constant w.r.t. parameters.
  std::vector<double> pooled(static_cast<size_t>(n_patches), 0.0);
  const double inv = 1.0 / (static_cast<double>(patch) * patch * m.c);
  for (int py = 0; py < ph; ++py) {
    for (int px = 0; px < pw; ++px) {
      double s = 0.0;
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          for (int ch = 0; ch < m.c; ++ch) s += m.at(py * patch + dy, px * patch + dx, ch);
        }
      }
      pooled[static_cast<size_t>(py) * pw + px] = s * inv;
    }
  }

  NodeId pooled_col = graph_.constant(Tensor({n_patches, 1}, std::move(pooled)));
  NodeId vis = graph_.add(graph_.matmul(pooled_col, bound("vision_encoder.weight")),
                          bound("vision_encoder.bias"));
  return graph_.add(graph_.matmul(vis, bound("projector.weight")), bound("projector.bias"));
}

ModelGraph::Assembled ModelGraph::assemble(const TokenSeq& x, const ImageTensor& m,
                                           const TokenSeq& c, const TokenSeq& y) {
  const VocabConfig& vocab = params_->vocab;
  validate_response(y, vocab);

  NodeId vis = visual_embeddings(m);
  const int64_t n_patches = graph_.value(vis).rows();

  const std::vector<int> prompt_ids = clean_conditioning(x, vocab);
  const std::vector<int> context_ids = clean_conditioning(c, vocab);

  const int cond_len = static_cast<int>(n_patches + prompt_ids.size() + context_ids.size());
  const int total_len = cond_len + y.length();
  if (total_len > vocab.max_seq_len) {
    throw std::invalid_argument("model: sequence length " + std::to_string(total_len) +
                                " exceeds max_seq_len " + std::to_string(vocab.max_seq_len));
  }

  std::vector<NodeId> segments = {vis};
  std::vector<int64_t> seg_rows(static_cast<size_t>(n_patches), kSegVisual);
  auto push_tokens = [&](const std::vector<int>& ids, int64_t seg) {
    if (ids.empty()) return;
    std::vector<int64_t> rows(ids.begin(), ids.end());
    segments.push_back(graph_.gather_rows(bound("text_embed.token"), rows));
    seg_rows.insert(seg_rows.end(), ids.size(), seg);
  };
  push_tokens(prompt_ids, kSegPrompt);
  push_tokens(context_ids, kSegContext);
  push_tokens(y.ids, kSegResponse);

  NodeId seq = segments.size() == 1 ? segments[0] : graph_.concat(segments);

  std::vector<int64_t> positions(static_cast<size_t>(total_len));
  for (int i = 0; i < total_len; ++i) positions[static_cast<size_t>(i)] = i;
  NodeId embedded = graph_.add(
      graph_.add(seq, graph_.gather_rows(bound("text_embed.position"), positions)),
      graph_.gather_rows(bound("text_embed.segment"), seg_rows));

  // Two stacked single-head causal attention blocks, each with a residual
  // connection. The second block lets queries depend on content gathered by
  // the first.
  Tensor mask = Tensor::zeros({total_len, total_len});
  for (int64_t i = 0; i < total_len; ++i) {
    for (int64_t j = i + 1; j < total_len; ++j) mask.at(i, j) = kMaskedScore;
  }
  const NodeId mask_node = graph_.constant(mask);
  const double scale = 1.0 / std::sqrt(static_cast<double>(params_->dims.hidden_dim));

  NodeId hidden = embedded;
  for (const char* block : {"lm_core.block0.", "lm_core.block1."}) {
    const std::string b(block);
    NodeId q = graph_.add(graph_.matmul(hidden, bound(b + "wq")), bound(b + "bq"));
    NodeId k = graph_.add(graph_.matmul(hidden, bound(b + "wk")), bound(b + "bk"));
    NodeId v = graph_.add(graph_.matmul(hidden, bound(b + "wv")), bound(b + "bv"));
    NodeId scores = graph_.scale(graph_.matmul(q, graph_.transpose(k)), scale);
    NodeId attn = graph_.exp(graph_.log_softmax(graph_.add(scores, mask_node)));
    NodeId mixed = graph_.add(graph_.matmul(graph_.matmul(attn, v), bound(b + "wo")),
                              bound(b + "bo"));
    hidden = graph_.add(hidden, mixed);
  }

  NodeId logits = graph_.add(graph_.matmul(hidden, bound("lm_head.weight")),
                             bound("lm_head.bias"));

  // y[t] is predicted from position cond_len - 1 + t.
  std::vector<int64_t> predictor_rows(static_cast<size_t>(y.length()));
  for (int t = 0; t < y.length(); ++t) predictor_rows[static_cast<size_t>(t)] = cond_len - 1 + t;
  NodeId step_rows = graph_.log_softmax(graph_.gather_rows(logits, predictor_rows));

  return {hidden, step_rows, cond_len, total_len};
}

NodeId ModelGraph::sequence_logprob(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                                    const TokenSeq& y) {
  Assembled a = assemble(x, m, c, y);
  Tensor onehot = Tensor::zeros({y.length(), static_cast<int64_t>(params_->vocab.vocab_size)});
  for (int t = 0; t < y.length(); ++t) onehot.at(t, y.ids[static_cast<size_t>(t)]) = 1.0;
  return graph_.sum(graph_.mul(a.step_rows, graph_.constant(onehot)));
}

Tensor ModelGraph::step_log_probs(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                                  const TokenSeq& y) {
  return graph_.value(assemble(x, m, c, y).step_rows);
}

NodeId ModelGraph::final_hidden(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                                const TokenSeq& y) {
  Assembled a = assemble(x, m, c, y);
  return graph_.gather_rows(a.hidden, {a.total_len - 1});
}

double sequence_logprob(const ModelParams& params, const TokenSeq& x, const ImageTensor& m,
                        const TokenSeq& c, const TokenSeq& y) {
  ModelGraph mg(params, {});
  return mg.graph().value(mg.sequence_logprob(x, m, c, y)).scalar_value();
}

Tensor encode_image(const ModelParams& params, const ImageTensor& image) {
  ModelGraph mg(params, {});
  return mg.graph().value(mg.visual_embeddings(image));
}

TokenSeq generate(const ModelParams& params, const TokenSeq& x, const ImageTensor& m,
                  const TokenSeq& c, int max_len) {
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
  const VocabConfig& vocab = params.vocab;

  TokenSeq out{{}, Role::response};
  for (int step = 0; step < max_len; ++step) {
    // Score the partial response by appending a provisional EOS, then read
    // the distribution at the first unfilled position.
    TokenSeq probe = out;
    probe.ids.push_back(vocab.eos_id);
    ModelGraph mg(params, {});
    Tensor rows = mg.step_log_probs(x, m, c, probe);
    const int64_t last = rows.rows() - 1;
    int best = 0;
    double best_v = rows.at(last, 0);
    for (int j = 1; j < vocab.vocab_size; ++j) {
      if (rows.at(last, j) > best_v) {
        best_v = rows.at(last, j);
        best = j;
      }
    }
    out.ids.push_back(best);
    if (best == vocab.eos_id) return out;
  }
  out.ids.push_back(vocab.eos_id);
  return out;
}

}  // namespace mcmdpo
