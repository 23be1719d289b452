#include "mcmdpo/llm_client.hpp"

#include <cstdlib>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "mcmdpo/text.hpp"

namespace mcmdpo {

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.grammar =
      "Your task is to check the given text for grammatical errors. "
      "Are there any grammatical errors in the following text?\n"
      "{text}\n"
      "Please generate the final judgment strictly in the following format:\n"
      "(1) If there are any grammatical errors, then output 'True'; otherwise output 'False'.\n"
      "(2) If your answer is True, then you need to provide the text after correcting the "
      "grammar issue in the following format: \"Corrected text:\"\n"
      "Make as few modifications as possible.\n"
      "If your answer is False, then no further changes are needed.\n";
  t.reject_gen =
      "Given the best alt-text of an image and context. If you are writing the alt-text for "
      "the given image, what kind of suboptimal alt-text will you write?\n"
      "Context:\n"
      "{context}\n"
      "Best alt-text:\n"
      "{alt_text}\n"
      "Suboptimal alt-text:\n";
  t.judge =
      "Image description:\n"
      "{image}\n"
      "Context:\n"
      "{context}\n"
      "Option A: {option_a}\n"
      "Option B: {option_b}\n"
      "Which alt-text is better for this image and context, A or B? Answer A or B.\n";
  return t;
}

void PromptTemplates::validate() const {
  auto need = [](const std::string& tpl, const char* placeholder, const char* which) {
    if (tpl.find(placeholder) == std::string::npos) {
      throw std::invalid_argument(std::string("PromptTemplates: ") + which + " template lacks " +
                                  placeholder);
    }
  };
  need(grammar, "{text}", "grammar");
  need(reject_gen, "{context}", "reject_gen");
  need(reject_gen, "{alt_text}", "reject_gen");
  need(judge, "{image}", "judge");
  need(judge, "{context}", "judge");
  need(judge, "{option_a}", "judge");
  need(judge, "{option_b}", "judge");
}

std::string fill_template(const std::string& tpl,
                          const std::map<std::string, std::string>& values) {
  std::string out = tpl;
  for (const auto& [key, value] : values) {
    const std::string slot = "{" + key + "}";
    size_t pos = 0;
    while ((pos = out.find(slot, pos)) != std::string::npos) {
      out.replace(pos, slot.size(), value);
      pos += value.size();
    }
  }
  return out;
}

LlmClientConfig LlmClientConfig::from_env() {
  LlmClientConfig cfg;
  if (const char* e = std::getenv("MCMDPO_LLM_ENDPOINT")) cfg.endpoint = e;
  if (const char* t = std::getenv("MCMDPO_LLM_TOKEN")) cfg.auth_token = t;
  return cfg;
}

namespace {

class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(LlmClientConfig config) : config_(std::move(config)) {
    if (config_.endpoint.rfind("http://", 0) != 0) {
      throw std::invalid_argument("HttpLlmClient: endpoint must be http:// (got '" +
                                  config_.endpoint + "')");
    }
    const std::string rest = config_.endpoint.substr(7);
    const size_t slash = rest.find('/');
    host_ = slash == std::string::npos ? rest : rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  }

  std::string complete(const std::string& prompt) override {
    nlohmann::json request;
    request["prompt"] = prompt;
    const std::string body = request.dump();

    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry_budget; ++attempt) {
      httplib::Client client(host_);
      client.set_connection_timeout(0, config_.timeout_ms * 1000);
      client.set_read_timeout(0, config_.timeout_ms * 1000);
      httplib::Headers headers;
      if (!config_.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.auth_token);
      }
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_error = "transport error " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      try {
        return nlohmann::json::parse(res->body).at("text").get<std::string>();
      } catch (const std::exception& e) {
        last_error = std::string("bad reply: ") + e.what();
      }
    }
    throw ClientError("HttpLlmClient: " + last_error + " after " +
                          std::to_string(config_.retry_budget) + " attempts",
                      config_.retry_budget);
  }

  std::string describe() const override { return "http(" + config_.endpoint + ")"; }

 private:
  LlmClientConfig config_;
  std::string host_;
  std::string path_;
};

}  // namespace

std::unique_ptr<LlmClient> make_http_client(const LlmClientConfig& config) {
  return std::make_unique<HttpLlmClient>(config);
}

ScriptedClient::ScriptedClient(std::vector<std::string> replies)
    : replies_(std::move(replies)) {}

std::string ScriptedClient::complete(const std::string& prompt) {
  prompts_.push_back(prompt);
  if (next_ >= replies_.size()) {
    throw ClientError("ScriptedClient: out of replies after " + std::to_string(next_) + " calls",
                      static_cast<int>(next_));
  }
  return replies_[next_++];
}

namespace {

std::string section(const std::string& prompt, const std::string& header,
                    const std::string& terminator) {
  const size_t start = prompt.find(header);
  if (start == std::string::npos) return "";
  const size_t begin = start + header.size();
  const size_t end = prompt.find(terminator, begin);
  return prompt.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

std::string option_line(const std::string& prompt, const std::string& tag) {
  const size_t start = prompt.find(tag);
  if (start == std::string::npos) return "";
  const size_t begin = start + tag.size();
  const size_t end = prompt.find('\n', begin);
  return prompt.substr(begin, end == std::string::npos ? std::string::npos : end - begin);
}

double option_score(const std::vector<std::string>& description,
                    const std::vector<std::string>& option) {
  // Bag overlap against the description, small bonus for matching word
  // order so reorderings rank below the faithful text.
  std::map<std::string, int> bag;
  for (const std::string& t : description) bag[t] += 1;
  int overlap = 0;
  for (const std::string& t : option) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      it->second -= 1;
      overlap += 1;
    }
  }
  int positional = 0;
  for (size_t i = 0; i < option.size() && i < description.size(); ++i) {
    if (option[i] == description[i]) positional += 1;
  }
  return 2.0 * overlap - static_cast<double>(option.size()) + 0.125 * positional;
}

}  // namespace

std::string ReferenceJudge::complete(const std::string& prompt) {
  const std::string image = section(prompt, "Image description:\n", "\nContext:");
  const std::vector<std::string> description = tokenize_words(image);
  const std::vector<std::string> a = tokenize_words(option_line(prompt, "Option A: "));
  const std::vector<std::string> b = tokenize_words(option_line(prompt, "Option B: "));
  return option_score(description, a) >= option_score(description, b) ? "A" : "B";
}

std::string FlakyClient::complete(const std::string& prompt) {
  if (failures_ > 0) {
    failures_ -= 1;
    throw ClientError("FlakyClient: injected transport failure", 1);
  }
  return inner_->complete(prompt);
}

}  // namespace mcmdpo
