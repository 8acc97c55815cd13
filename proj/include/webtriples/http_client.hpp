#pragma once

// OpenAI-compatible chat-completions adapter. Providers differ only in the
// endpoint URL, model id and the environment variable holding the key.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "webtriples/llm_gateway.hpp"

namespace webtriples {

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ModelConfig config) : config_(std::move(config)) {
    const std::string& url = config_.endpoint;
    std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
      throw DataError("endpoint must be an absolute URL: " + url);
    }
    std::size_t path_start = url.find('/', scheme_end + 3);
    base_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (!config_.api_key_env.empty()) {
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (!key) {
        throw DataError("environment variable " + config_.api_key_env +
                        " is not set");
      }
      api_key_ = key;
    }
  }

  ChatResponse send(const ChatRequest& request) override {
    nlohmann::json body = {
        {"model", request.model.empty() ? config_.model : request.model},
        {"messages",
         nlohmann::json::array(
             {{{"role", "system"}, {"content", request.system}},
              {{"role", "user"}, {"content", request.user}}})},
        {"max_tokens", request.max_output_tokens},
        {"temperature", request.temperature}};

    httplib::Client client(base_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
    client.set_connection_timeout(
        std::chrono::duration_cast<std::chrono::seconds>(timeout));
    client.set_read_timeout(
        std::chrono::duration_cast<std::chrono::seconds>(timeout));
    httplib::Headers headers;
    if (!api_key_.empty()) {
      headers.emplace("Authorization", "Bearer " + api_key_);
    }

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    const double latency =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (!res) {
      throw TransportFailed(
          "request to " + base_ + path_ + " failed: " +
              httplib::to_string(res.error()),
          true);
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransportFailed("HTTP " + std::to_string(res->status), true);
    }
    if (res->status != 200) {
      throw TransportFailed(
          "HTTP " + std::to_string(res->status) + ": " + res->body, false);
    }

    ChatResponse out;
    out.latency_seconds = latency;
    try {
      auto j = nlohmann::json::parse(res->body);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      out.text = content.is_null() ? std::string() : content.get<std::string>();
      if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
        out.usage = TokenUsage{u->value("prompt_tokens", std::size_t{0}),
                               u->value("completion_tokens", std::size_t{0})};
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportFailed(std::string("malformed response: ") + e.what(),
                            false);
    }
    return out;
  }

 private:
  ModelConfig config_;
  std::string base_;
  std::string path_;
  std::string api_key_;
};

}  // namespace webtriples
