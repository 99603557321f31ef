#pragma once

// OpenAI-compatible chat-completion backend over HTTP(S).
//
// POST <endpoint>/chat/completions
//   {"model": ..., "messages": [{"role":"system",...},{"role":"user",...}],
//    "temperature": ..., "max_tokens": ...}
// and reads choices[0].message.content. The API key comes from the
// environment only.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>

#include "rlie/backend.hpp"
#include "rlie/core.hpp"

namespace rlie {

struct ModelConfig {
  std::string endpoint = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  double temperature = 1e-5;
  int max_tokens = 1024;
  double timeout_s = 60.0;
  int retries = 3;
  int backoff_ms = 500;
  std::size_t max_in_flight = 4;
  std::string api_key_env = "OPENAI_API_KEY";

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (!(c.temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (c.retries < 0) throw ConfigError("retry budget must be >= 0");
  if (c.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (!(c.timeout_s > 0.0)) throw ConfigError("timeout must be > 0");
  if (c.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (c.endpoint.empty() || c.model.empty()) throw ConfigError("endpoint and model must be set");
}

// Split "https://host:port/base" into ("https://host:port", "/base").
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string base = url.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {url.substr(0, path_start), base};
}

inline json chat_completion_body(const ModelConfig& cfg, const RenderedPrompt& prompt) {
  json messages = json::array();
  if (!prompt.system.empty()) messages.push_back({{"role", "system"}, {"content", prompt.system}});
  messages.push_back({{"role", "user"}, {"content", prompt.user}});
  return json{{"model", cfg.model},
              {"messages", messages},
              {"temperature", cfg.temperature},
              {"max_tokens", cfg.max_tokens}};
}

class OpenAIBackend : public Backend {
 public:
  OpenAIBackend(ModelConfig cfg, std::string api_key) : cfg_(std::move(cfg)), api_key_(std::move(api_key)) {
    validate(cfg_);
    std::tie(host_, base_path_) = split_endpoint(cfg_.endpoint);
  }

  // Reads the key from cfg.api_key_env; RLIE_ENDPOINT overrides the endpoint.
  static OpenAIBackend from_environment(ModelConfig cfg) {
    if (const char* ep = std::getenv("RLIE_ENDPOINT"); ep && *ep) cfg.endpoint = ep;
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) throw ConfigError("environment variable " + cfg.api_key_env + " is not set");
    return OpenAIBackend(std::move(cfg), key);
  }

  BackendCapabilities capabilities() const override { return {"openai:" + cfg_.model, cfg_.max_in_flight, false}; }
  std::string model_name() const override { return cfg_.model; }

  std::string complete(const ChatRequest& request) override {
    const auto body = chat_completion_body(cfg_, request.prompt).dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(cfg_.backoff_ms) << (attempt - 1)));
      }
      httplib::Client client(host_);
      const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::duration<double>(cfg_.timeout_s));
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

      auto res = client.Post(base_path_ + "/chat/completions", headers, body, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + cfg_.endpoint + ": " + res->body);
      }
      return extract_content(res->body);
    }
    throw BackendError("giving up after " + std::to_string(cfg_.retries + 1) + " attempts: " + last_error);
  }

  static std::string extract_content(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw BackendError("chat completion response is not JSON");
    try {
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) throw BackendError("chat completion content is not a string");
      return content.get<std::string>();
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed chat completion response: ") + e.what());
    }
  }

 private:
  ModelConfig cfg_;
  std::string api_key_;
  std::string host_;
  std::string base_path_;
};

}  // namespace rlie
