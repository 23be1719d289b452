#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcmdpo {

// Thrown when a client cannot produce a reply within its retry budget.
struct ClientError : std::runtime_error {
  int attempts = 0;
  ClientError(const std::string& what, int attempts_)
      : std::runtime_error(what), attempts(attempts_) {}
};

// Everything external speaks this interface; live endpoints are
// configuration, deterministic mocks are the test and offline default.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string describe() const = 0;
};

// Prompt templates with their required placeholders.
struct PromptTemplates {
  std::string grammar;     // {text}
  std::string reject_gen;  // {context}, {alt_text}
  std::string judge;       // {image}, {context}, {option_a}, {option_b}
  static PromptTemplates defaults();
  void validate() const;
};

std::string fill_template(const std::string& tpl,
                          const std::map<std::string, std::string>& values);

// Wire format: POST {"prompt": ...} -> {"text": ...}. Endpoint and token
// come from config (see from_env).
struct LlmClientConfig {
  std::string endpoint;  // e.g. http://host:port/complete
  std::string auth_token;
  int timeout_ms = 10000;
  int retry_budget = 3;
  static LlmClientConfig from_env();  // MCMDPO_LLM_ENDPOINT / MCMDPO_LLM_TOKEN
};

std::unique_ptr<LlmClient> make_http_client(const LlmClientConfig& config);

// --- deterministic mocks ----------------------------------------------------

// Replays a fixed list of replies in order; records every prompt.
class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies);
  std::string complete(const std::string& prompt) override;
  std::string describe() const override { return "scripted"; }
  const std::vector<std::string>& prompts() const { return prompts_; }
  int calls() const { return static_cast<int>(prompts_.size()); }

 private:
  std::vector<std::string> replies_;
  std::vector<std::string> prompts_;
  size_t next_ = 0;
};

// Always replies with the same string.
class EchoClient : public LlmClient {
 public:
  explicit EchoClient(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const std::string&) override { return reply_; }
  std::string describe() const override { return "echo"; }

 private:
  std::string reply_;
};

// Position-biased judge: always prefers the first option.
class FirstOptionJudge : public LlmClient {
 public:
  std::string complete(const std::string&) override { return "A"; }
  std::string describe() const override { return "first-option-judge"; }
};

// Offline judge stand-in: parses the judge prompt and answers with the
// option that shares more words with the image-description section, so a
// genuinely better alt-text wins regardless of position.
class ReferenceJudge : public LlmClient {
 public:
  std::string complete(const std::string& prompt) override;
  std::string describe() const override { return "reference-judge"; }
};

// Grammar-corrector stand-in that always reports the text as clean.
class CleanGrammarClient : public LlmClient {
 public:
  std::string complete(const std::string&) override { return "False"; }
  std::string describe() const override { return "clean-grammar"; }
};

// Wraps a client with transport-failure injection for protocol tests:
// fails the first `failures` calls, then delegates.
class FlakyClient : public LlmClient {
 public:
  FlakyClient(LlmClient& inner, int failures) : inner_(&inner), failures_(failures) {}
  std::string complete(const std::string& prompt) override;
  std::string describe() const override { return "flaky(" + inner_->describe() + ")"; }

 private:
  LlmClient* inner_;
  int failures_;
};

}  // namespace mcmdpo
