#include "mcmdpo/reject.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "mcmdpo/text.hpp"

namespace mcmdpo {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.alpha_bar.assign(static_cast<size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double beta =
        steps == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(steps - 1);
    s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - beta);
  }
  return s;
}

const NoiseSchedule& NoiseSchedule::standard() {
  static const NoiseSchedule s = linear(1000, 1e-4, 0.02);
  return s;
}

RejectImageStrategy RejectImageStrategy::diffusion(int steps) {
  RejectImageStrategy s;
  s.kind = Kind::diffusion;
  s.noise_steps = steps;
  return s;
}
RejectImageStrategy RejectImageStrategy::blackness() {
  RejectImageStrategy s;
  s.kind = Kind::blackness;
  return s;
}
RejectImageStrategy RejectImageStrategy::crop(double min_ratio, double max_ratio) {
  RejectImageStrategy s;
  s.kind = Kind::crop;
  s.min_ratio = min_ratio;
  s.max_ratio = max_ratio;
  return s;
}
RejectImageStrategy RejectImageStrategy::rotation(double min_deg, double max_deg) {
  RejectImageStrategy s;
  s.kind = Kind::rotation;
  s.min_deg = min_deg;
  s.max_deg = max_deg;
  return s;
}
RejectImageStrategy RejectImageStrategy::randomness() {
  RejectImageStrategy s;
  s.kind = Kind::randomness;
  return s;
}

RejectImageStrategy RejectImageStrategy::parse(const std::string& name) {
  std::string head = name;
  std::string arg;
  if (const size_t colon = name.find(':'); colon != std::string::npos) {
    head = name.substr(0, colon);
    arg = name.substr(colon + 1);
  }
  if (head == "diffusion") return diffusion(arg.empty() ? kDefaultNoiseStep : std::stoi(arg));
  if (head == "blackness") return blackness();
  if (head == "crop") return crop();
  if (head == "rotation") return rotation();
  if (head == "randomness") return randomness();
  throw std::invalid_argument("unknown rejected-image strategy '" + name + "'");
}

void RejectImageStrategy::validate(const NoiseSchedule& schedule) const {
  switch (kind) {
    case Kind::diffusion:
      if (noise_steps < 0 || noise_steps > schedule.steps) {
        throw std::invalid_argument("RejectImageStrategy: noise step " +
                                    std::to_string(noise_steps) + " outside schedule [0, " +
                                    std::to_string(schedule.steps) + "]");
      }
      break;
    case Kind::crop:
      if (!(min_ratio > 0.0 && min_ratio <= max_ratio && max_ratio <= 1.0)) {
        throw std::invalid_argument("RejectImageStrategy: crop ratios must satisfy 0 < min <= max <= 1");
      }
      break;
    case Kind::rotation:
      if (!(min_deg >= 0.0 && min_deg <= max_deg && max_deg < 360.0)) {
        throw std::invalid_argument("RejectImageStrategy: rotation range must satisfy 0 <= min <= max < 360");
      }
      break;
    default:
      break;
  }
}

std::string RejectImageStrategy::name() const {
  switch (kind) {
    case Kind::diffusion: return "diffusion";
    case Kind::blackness: return "blackness";
    case Kind::crop: return "crop";
    case Kind::rotation: return "rotation";
    case Kind::randomness: return "randomness";
  }
  return "?";
}

namespace {

ImageTensor diffuse(const ImageTensor& image, int steps, const NoiseSchedule& schedule, Rng& rng) {
  const double ab = schedule.alpha_bar[static_cast<size_t>(steps)];
  const double signal = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  ImageTensor out = image;
  for (double& v : out.data) {
    v = std::clamp(signal * v + noise * rng.normal(), 0.0, 1.0);
  }
  return out;
}

ImageTensor crop_resize(const ImageTensor& image, double min_ratio, double max_ratio, Rng& rng) {
  const double ratio = rng.uniform(min_ratio, max_ratio);
  const double side = std::sqrt(ratio);
  const int ch = std::max<int>(1, static_cast<int>(std::lround(image.h * side)));
  const int cw = std::max<int>(1, static_cast<int>(std::lround(image.w * side)));
  const int top = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(image.h - ch + 1)));
  const int left = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(image.w - cw + 1)));

  ImageTensor out = ImageTensor::filled(image.h, image.w, image.c, 0.0);
  for (int y = 0; y < image.h; ++y) {
    const int sy = top + std::min(ch - 1, y * ch / image.h);
    for (int x = 0; x < image.w; ++x) {
      const int sx = left + std::min(cw - 1, x * cw / image.w);
      for (int k = 0; k < image.c; ++k) out.at(y, x, k) = image.at(sy, sx, k);
    }
  }
  return out;
}

ImageTensor rotate(const ImageTensor& image, double min_deg, double max_deg, Rng& rng) {
  const double theta = rng.uniform(min_deg, max_deg) * 3.141592653589793238462643 / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = (image.h - 1) / 2.0, cx = (image.w - 1) / 2.0;

  ImageTensor out = ImageTensor::filled(image.h, image.w, image.c, 0.0);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      // Inverse mapping with bilinear resampling; zero fill outside.
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + cos_t * dx + sin_t * dy;
      const double sy = cy - sin_t * dx + cos_t * dy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int k = 0; k < image.c; ++k) {
        auto sample = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= image.h || xx < 0 || xx >= image.w) return 0.0;
          return image.at(yy, xx, k);
        };
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        out.at(y, x, k) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace

ImageTensor make_rejected_image(const ImageTensor& image, const RejectImageStrategy& strategy,
                                Rng& rng, const NoiseSchedule& schedule, const ImagePool* pool) {
  image.validate();
  strategy.validate(schedule);
  switch (strategy.kind) {
    case RejectImageStrategy::Kind::diffusion:
      return diffuse(image, strategy.noise_steps, schedule, rng);
    case RejectImageStrategy::Kind::blackness:
      return ImageTensor::filled(image.h, image.w, image.c, 0.0);
    case RejectImageStrategy::Kind::crop:
      return crop_resize(image, strategy.min_ratio, strategy.max_ratio, rng);
    case RejectImageStrategy::Kind::rotation:
      return rotate(image, strategy.min_deg, strategy.max_deg, rng);
    case RejectImageStrategy::Kind::randomness: {
      if (pool == nullptr || pool->images.size() < 2) {
        throw std::invalid_argument(
            "make_rejected_image: randomness needs a pool of at least 2 images");
      }
      size_t pick = static_cast<size_t>(rng.uniform_index(pool->images.size() - 1));
      if (pick >= pool->self_index) pick += 1;
      const ImageTensor& other = pool->images[pick];
      if (other.h != image.h || other.w != image.w || other.c != image.c) {
        throw std::invalid_argument("make_rejected_image: pool image shape mismatch");
      }
      return other;
    }
  }
  throw std::logic_error("make_rejected_image: bad strategy");
}

RejectedContext make_rejected_context(std::span<const TokenSeq> contexts, size_t item_index,
                                      Rng& rng) {
  if (contexts.size() < 2) {
    throw std::invalid_argument("make_rejected_context: dataset must hold at least 2 samples");
  }
  if (item_index >= contexts.size()) {
    throw std::out_of_range("make_rejected_context: item index out of range");
  }
  size_t pick = static_cast<size_t>(rng.uniform_index(contexts.size() - 1));
  if (pick >= item_index) pick += 1;
  TokenSeq out = contexts[pick];
  out.role = Role::context;
  return {out, pick};
}

RejectResponseMode parse_reject_mode(const std::string& s) {
  if (s == "external_client" || s == "external") return RejectResponseMode::external_client;
  if (s == "synthetic_corruption" || s == "synthetic") return RejectResponseMode::synthetic_corruption;
  throw std::invalid_argument("unknown reject mode '" + s + "'");
}

const char* reject_mode_name(RejectResponseMode m) {
  return m == RejectResponseMode::external_client ? "external_client" : "synthetic_corruption";
}

namespace {

const std::vector<std::string>& shape_words() {
  static const std::vector<std::string> words = {"circle", "square", "triangle"};
  return words;
}
const std::vector<std::string>& color_words() {
  static const std::vector<std::string> words = {"red", "green", "blue", "yellow"};
  return words;
}

bool is_content_word(const std::string& tok) {
  return !tok.empty() && std::isalnum(static_cast<unsigned char>(tok[0])) && !is_stopword(tok);
}

const std::vector<std::string>* category_of(const std::string& tok) {
  for (const auto* cat : {&shape_words(), &color_words()}) {
    if (std::find(cat->begin(), cat->end(), tok) != cat->end()) return cat;
  }
  return nullptr;
}

// Each edit returns true and fills `out` when it can change the ids.
bool try_drop(const std::vector<int>& ids, const Vocabulary& vocab, Rng& rng,
              std::vector<int>* out) {
  if (ids.size() < 2) return false;
  std::vector<size_t> candidates;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (is_content_word(vocab.token(ids[i]))) candidates.push_back(i);
  }
  if (candidates.empty()) return false;
  const size_t victim = candidates[rng.uniform_index(candidates.size())];
  *out = ids;
  out->erase(out->begin() + static_cast<std::ptrdiff_t>(victim));
  return true;
}

bool try_swap(const std::vector<int>& ids, Rng& rng, std::vector<int>* out) {
  std::vector<size_t> candidates;
  for (size_t i = 0; i + 1 < ids.size(); ++i) {
    if (ids[i] != ids[i + 1]) candidates.push_back(i);
  }
  if (candidates.empty()) return false;
  const size_t at = candidates[rng.uniform_index(candidates.size())];
  *out = ids;
  std::swap((*out)[at], (*out)[at + 1]);
  return true;
}

bool try_replace(const std::vector<int>& ids, const Vocabulary& vocab, Rng& rng,
                 std::vector<int>* out) {
  struct Option {
    size_t position;
    int replacement;
  };
  std::vector<Option> options;
  for (size_t i = 0; i < ids.size(); ++i) {
    const std::string& tok = vocab.token(ids[i]);
    const std::vector<std::string>* cat = category_of(tok);
    if (cat == nullptr) continue;
    for (const std::string& alt : *cat) {
      if (alt != tok && vocab.contains(alt)) options.push_back({i, vocab.id(alt)});
    }
  }
  if (options.empty()) return false;
  const Option& pick = options[rng.uniform_index(options.size())];
  *out = ids;
  (*out)[pick.position] = pick.replacement;
  return true;
}

}  // namespace

TokenSeq make_rejected_response(const RejectResponseInput& input, RejectResponseMode mode,
                                const Vocabulary& vocab, LlmClient* client, Rng& rng,
                                const PromptTemplates& templates) {
  if (mode == RejectResponseMode::external_client) {
    if (client == nullptr) {
      throw std::invalid_argument("make_rejected_response: external mode needs a client");
    }
    const std::string prompt = fill_template(
        templates.reject_gen, {{"context", input.context_text}, {"alt_text", input.alt_text}});
    const std::string reply = client->complete(prompt);
    return vocab.encode(reply, Role::response);
  }

  // Synthetic corruption over the chosen tokens.
  if (input.alt_ids.empty()) {
    throw std::invalid_argument("make_rejected_response: empty chosen response");
  }
  const int edit = static_cast<int>(rng.uniform_index(3));
  std::vector<int> corrupted;
  for (int attempt = 0; attempt < 3; ++attempt) {
    const int which = (edit + attempt) % 3;
    bool ok = false;
    if (which == 0) ok = try_drop(input.alt_ids, vocab, rng, &corrupted);
    else if (which == 1) ok = try_swap(input.alt_ids, rng, &corrupted);
    else ok = try_replace(input.alt_ids, vocab, rng, &corrupted);
    if (ok && corrupted != input.alt_ids) {
      TokenSeq seq{corrupted, Role::response};
      seq.ids.push_back(kEosId);
      return seq;
    }
  }
  throw std::runtime_error("make_rejected_response: corruption unable to change response '" +
                           input.alt_text + "'");
}

}  // namespace mcmdpo
