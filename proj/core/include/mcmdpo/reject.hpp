#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcmdpo/image.hpp"
#include "mcmdpo/llm_client.hpp"
#include "mcmdpo/rng.hpp"
#include "mcmdpo/tokens.hpp"

namespace mcmdpo {

// Forward-noising variance schedule: per-step beta linear from beta_start
// to beta_end, alpha_bar_t the running product of (1 - beta_s), with
// alpha_bar_0 == 1.
struct NoiseSchedule {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> alpha_bar;  // size steps + 1

  static const NoiseSchedule& standard();  // 1000 steps, 1e-4 -> 0.02
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
};

inline constexpr int kDefaultNoiseStep = 700;

struct RejectImageStrategy {
  enum class Kind { diffusion, blackness, crop, rotation, randomness };
  Kind kind = Kind::diffusion;
  int noise_steps = kDefaultNoiseStep;  // diffusion
  double min_ratio = 0.5, max_ratio = 0.9;  // crop area ratio
  double min_deg = 10.0, max_deg = 80.0;    // rotation range

  static RejectImageStrategy diffusion(int steps = kDefaultNoiseStep);
  static RejectImageStrategy blackness();
  static RejectImageStrategy crop(double min_ratio = 0.5, double max_ratio = 0.9);
  static RejectImageStrategy rotation(double min_deg = 10.0, double max_deg = 80.0);
  static RejectImageStrategy randomness();
  static RejectImageStrategy parse(const std::string& name);  // "diffusion:700" etc.

  void validate(const NoiseSchedule& schedule) const;
  std::string name() const;
};

// Pool of other samples' images; required by the randomness strategy.
struct ImagePool {
  std::span<const ImageTensor> images;
  size_t self_index = 0;
};

// All strategies keep the input shape and the [0,1] range.
ImageTensor make_rejected_image(const ImageTensor& image, const RejectImageStrategy& strategy,
                                Rng& rng, const NoiseSchedule& schedule = NoiseSchedule::standard(),
                                const ImagePool* pool = nullptr);

// Uniformly chosen context of a different sample.
struct RejectedContext {
  TokenSeq context;
  size_t source_index;
};
RejectedContext make_rejected_context(std::span<const TokenSeq> contexts, size_t item_index,
                                      Rng& rng);

enum class RejectResponseMode { external_client, synthetic_corruption };
RejectResponseMode parse_reject_mode(const std::string& s);
const char* reject_mode_name(RejectResponseMode m);

struct RejectResponseInput {
  std::string context_text;   // fills the generation prompt (external mode)
  std::string alt_text;       // the chosen response as text
  std::vector<int> alt_ids;   // the chosen response tokens, without EOS
};

// Builds a rejected response that always differs from the chosen one.
// Synthetic mode picks uniformly among: drop a content word, swap two
// adjacent words, replace a shape/color word with a different in-vocabulary
// one; if the drawn edit cannot change the text the others are tried.
TokenSeq make_rejected_response(const RejectResponseInput& input, RejectResponseMode mode,
                                const Vocabulary& vocab, LlmClient* client, Rng& rng,
                                const PromptTemplates& templates = PromptTemplates::defaults());

}  // namespace mcmdpo
