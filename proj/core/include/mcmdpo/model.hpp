#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcmdpo/autodiff.hpp"
#include "mcmdpo/image.hpp"
#include "mcmdpo/tokens.hpp"

namespace mcmdpo {

struct ModelDims {
  int patch_size = 4;
  int embed_dim = 16;
  int hidden_dim = 32;
  bool operator==(const ModelDims&) const = default;
};

// Named, grouped parameters for the conditional LM. A parameter's group is
// the prefix of its name ("lm_core.wq" -> "lm_core"); the five groups are
// fixed and drive the paradigm freeze masks.
struct ModelParams {
  VocabConfig vocab;
  ModelDims dims;
  std::map<std::string, Tensor> tensors;

  static const std::array<std::string, 5>& group_names();
  static std::string group_of(const std::string& param_name);
  static std::map<std::string, std::vector<int64_t>> expected_shapes(const VocabConfig& vocab,
                                                                     const ModelDims& dims);

  // Uniform(-0.08, 0.08) from the seed, in a fixed parameter order.
  static ModelParams init(const VocabConfig& vocab, const ModelDims& dims, uint64_t seed);

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  void validate() const;
  uint64_t fingerprint() const;
  bool operator==(const ModelParams&) const = default;
};

enum class Paradigm { P1, P2, P3, P4 };
enum class Stage { S1, S2 };

Paradigm parse_paradigm(const std::string& s);
const char* paradigm_name(Paradigm p);
const char* stage_name(Stage s);

// Which parameter groups train in the given stage. The projector, text
// embeddings, core and head always train; the vision encoder follows the
// paradigm table.
std::set<std::string> trainable_groups(Paradigm paradigm, Stage stage);

// One forward construction context: parameters are copied in as graph
// leaves at construction (trainable groups become parameters, frozen ones
// constants), then any number of scoring subgraphs can be added.
class ModelGraph {
 public:
  ModelGraph(const ModelParams& params, const std::set<std::string>& trainable);
  explicit ModelGraph(const ModelParams& params);  // everything trainable

  // Differentiable scalar log pi(y | x, m, c). Conditioning order is
  // visual -> prompt -> context -> response; PAD tokens and anything after
  // a first EOS are stripped from prompt/context segments.
  NodeId sequence_logprob(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                          const TokenSeq& y);

  // Log-softmax rows over the vocabulary for each response position
  // (values only; same subgraph as sequence_logprob).
  Tensor step_log_probs(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                        const TokenSeq& y);

  // Pre-head hidden state at the final response position, shape [1, D].
  NodeId final_hidden(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                      const TokenSeq& y);

  // Per-patch visual embeddings after the projector, shape [n_patches, D].
  NodeId visual_embeddings(const ImageTensor& m);

  Graph& graph() { return graph_; }
  const Graph& graph() const { return graph_; }
  const ModelParams& params() const { return *params_; }

 private:
  struct Assembled {
    NodeId hidden;    // [T, D]
    NodeId step_rows; // [|y|, V] log-softmax rows
    int cond_len;
    int total_len;
  };
  Assembled assemble(const TokenSeq& x, const ImageTensor& m, const TokenSeq& c,
                     const TokenSeq& y);
  NodeId bound(const std::string& name);

  const ModelParams* params_;
  Graph graph_;
  std::map<std::string, NodeId> bindings_;
};

// Value-only conveniences built on ModelGraph.
double sequence_logprob(const ModelParams& params, const TokenSeq& x, const ImageTensor& m,
                        const TokenSeq& c, const TokenSeq& y);

// Per-patch visual embeddings after the projector, shape [n_patches, D].
// Each patch is mean-pooled over its pixels and channels first.
Tensor encode_image(const ModelParams& params, const ImageTensor& image);

// Greedy argmax decoding; ties break toward the lowest token id. Stops at
// EOS or after max_len emitted tokens (EOS is appended then so the result
// is a well-formed response).
TokenSeq generate(const ModelParams& params, const TokenSeq& x, const ImageTensor& m,
                  const TokenSeq& c, int max_len);

// Prompt/context cleanup used by the conditioning builder: PADs dropped,
// sequence truncated after the first EOS.
std::vector<int> clean_conditioning(const TokenSeq& seq, const VocabConfig& vocab);

}  // namespace mcmdpo
