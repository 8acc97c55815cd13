#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "webtriples/error.hpp"
#include "webtriples/page_model.hpp"
#include "webtriples/prompts.hpp"

namespace webtriples {

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
  std::size_t max_output_tokens = 8192;
  double temperature = 0.0;

  static ChatRequest from_prompt(std::string model, const RenderedPrompt& p) {
    ChatRequest r;
    r.model = std::move(model);
    r.system = p.system;
    r.user = p.user;
    return r;
  }
};

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  std::optional<TokenUsage> usage;
  double latency_seconds = 0.0;
};

inline nlohmann::json to_json(const ChatRequest& r) {
  return {{"model", r.model},
          {"system", r.system},
          {"user", r.user},
          {"max_output_tokens", r.max_output_tokens},
          {"temperature", r.temperature}};
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

/// Content address of a request: SHA-256 of its key-sorted JSON form.
inline std::string request_hash(const ChatRequest& r) {
  return sha256_hex(to_json(r).dump());
}

/// Transport to one model endpoint. Implementations throw TransportFailed
/// (transient or not) or ReplayMiss.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
};

/// Adapts a callable; used for scripted models and tests.
class CallbackClient : public ChatClient {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  explicit CallbackClient(Fn fn) : fn_(std::move(fn)) {}
  ChatResponse send(const ChatRequest& request) override {
    return {fn_(request), std::nullopt, 0.0};
  }

 private:
  Fn fn_;
};

/// Keeps every request/response pair that passes through, in call order.
class TranscriptClient : public ChatClient {
 public:
  struct Entry {
    ChatRequest request;
    std::string response;
  };

  explicit TranscriptClient(std::shared_ptr<ChatClient> inner)
      : inner_(std::move(inner)) {}

  ChatResponse send(const ChatRequest& request) override {
    ChatResponse r = inner_->send(request);
    std::lock_guard lock(mu_);
    entries_.push_back({request, r.text});
    return r;
  }

  std::vector<Entry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  std::shared_ptr<ChatClient> inner_;
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Replay store
// ---------------------------------------------------------------------------

/// Serves responses from a content-addressed JSONL store of
/// {"request_hash", "response_text"} lines.
class ReplayClient : public ChatClient {
 public:
  explicit ReplayClient(const std::filesystem::path& store) {
    std::ifstream in(store);
    if (!in) return;  // every request misses
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto j = nlohmann::json::parse(line);
        responses_[j.at("request_hash").get<std::string>()] =
            j.at("response_text").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw StoreError(store.string() + ":" + std::to_string(lineno) + ": " +
                         e.what());
      }
    }
  }

  ChatResponse send(const ChatRequest& request) override {
    const std::string hash = request_hash(request);
    std::shared_lock lock(mu_);
    auto it = responses_.find(hash);
    if (it == responses_.end()) throw ReplayMiss(hash);
    return {it->second, std::nullopt, 0.0};
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return responses_.size();
  }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::string> responses_;
};

/// Forwards to a live client and appends each new request/response pair to
/// the store.
class RecordingClient : public ChatClient {
 public:
  RecordingClient(std::shared_ptr<ChatClient> live,
                  std::filesystem::path store)
      : live_(std::move(live)), store_(std::move(store)) {
    if (std::filesystem::exists(store_)) {
      std::ifstream in(store_);
      std::string line;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          known_.insert(
              nlohmann::json::parse(line).at("request_hash").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
          throw StoreError(store_.string() + ": " + e.what());
        }
      }
    }
    out_.open(store_, std::ios::app);
    if (!out_) throw StoreError("cannot open store " + store_.string());
  }

  ChatResponse send(const ChatRequest& request) override {
    ChatResponse r = live_->send(request);
    const std::string hash = request_hash(request);
    std::lock_guard lock(mu_);
    if (known_.insert(hash).second) {
      nlohmann::json j = {{"request_hash", hash}, {"response_text", r.text}};
      out_ << j.dump() << '\n';
      out_.flush();
      if (!out_) throw StoreError("cannot write store " + store_.string());
    }
    return r;
  }

 private:
  std::shared_ptr<ChatClient> live_;
  std::filesystem::path store_;
  std::mutex mu_;
  std::ofstream out_;
  std::unordered_set<std::string> known_;
};

inline std::shared_ptr<RecordingClient> record_session(
    std::shared_ptr<ChatClient> live, const std::filesystem::path& store) {
  return std::make_shared<RecordingClient>(std::move(live), store);
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Rejects prompts longer than the context window before they are sent.
struct ContextGuard {
  std::size_t max_tokens = 128000;
  Tokenizer tokenizer;

  std::size_t prompt_tokens(const ChatRequest& r) const {
    return tokenizer.count(r.system) + tokenizer.count(r.user);
  }

  void check(const ChatRequest& r) const {
    const std::size_t n = prompt_tokens(r);
    if (n > max_tokens) throw ContextOverflow(n, max_tokens);
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

/// Bounds the number of requests in flight at once.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(std::size_t limit) : available_(limit ? limit : 1) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t available_;
};

/// Shared entry point for all model calls: context guard, bounded retries
/// with exponential backoff, and an in-flight limit.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatClient> client, ContextGuard guard = {},
          RetryPolicy retry = {}, std::size_t max_in_flight = 4)
      : client_(std::move(client)),
        guard_(std::move(guard)),
        retry_(retry),
        limiter_(std::make_shared<InFlightLimiter>(max_in_flight)) {}

  const ContextGuard& guard() const { return guard_; }

  ChatResponse complete(const ChatRequest& request) const {
    guard_.check(request);
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      limiter_->acquire();
      try {
        const auto start = std::chrono::steady_clock::now();
        ChatResponse r = client_->send(request);
        limiter_->release();
        if (r.latency_seconds == 0.0) {
          r.latency_seconds = std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
        }
        return r;
      } catch (const TransportFailed& e) {
        limiter_->release();
        if (!e.transient() || attempt >= retry_.max_attempts) throw;
      } catch (...) {
        limiter_->release();
        throw;
      }
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(
          static_cast<double>(backoff.count()) * retry_.multiplier));
    }
  }

 private:
  std::shared_ptr<ChatClient> client_;
  ContextGuard guard_;
  RetryPolicy retry_;
  std::shared_ptr<InFlightLimiter> limiter_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// One model endpoint as configured in an experiment file.
struct ModelConfig {
  std::string endpoint;           // chat-completions URL
  std::string model;
  std::string api_key_env;        // name of the env var holding the key
  std::size_t context_tokens = 128000;
  std::size_t max_output_tokens = 8192;
  std::size_t rate_limit = 4;     // max requests in flight
  double timeout_seconds = 300;
};

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw DataError("model config must be an object");
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.context_tokens = j.value("max_tokens", c.context_tokens);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.rate_limit = j.value("rate_limit", c.rate_limit);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  if (c.context_tokens == 0) throw DataError("max_tokens must be positive");
  return c;
}

}  // namespace webtriples
