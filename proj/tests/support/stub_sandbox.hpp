#pragma once

// In-process stand-in for the script runner. Requests and responses cross
// the same JSON wire format as the process runner; scripts are looked up by
// their exact source text.

#include <atomic>
#include <functional>
#include <map>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "webtriples/sandbox.hpp"
#include "webtriples/triple_core.hpp"

namespace stub {

class StubSandbox : public webtriples::Sandbox {
 public:
  using Behavior = std::function<nlohmann::json(const webtriples::SandboxRequest&)>;

  void define(const std::string& source, Behavior behavior) {
    std::lock_guard lock(mu_);
    scripts_[source] = std::move(behavior);
  }

  std::string exchange(const std::string& request_json, double) override {
    ++calls_;
    const auto request =
        webtriples::sandbox_request_from_json(nlohmann::json::parse(request_json));
    Behavior behavior;
    {
      std::lock_guard lock(mu_);
      auto it = scripts_.find(request.script_source);
      if (it != scripts_.end()) behavior = it->second;
    }
    if (!behavior) {
      return error("NameError: name 'parse' is not defined").dump() + "\n";
    }
    return behavior(request).dump() + "\n";
  }

  std::size_t calls() const { return calls_; }

  static nlohmann::json ok(const webtriples::TripleList& triples) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : triples) {
      rows.push_back({t.triple.subject, t.triple.predicate, t.triple.object});
    }
    return {{"status", "ok"}, {"triples", rows}, {"truncated", false},
            {"wall_time_seconds", 0.0}};
  }
  static nlohmann::json error(const std::string& message) {
    return {{"status", "error"}, {"error_message", message},
            {"traceback_tail", "Traceback (most recent call last):\n" + message},
            {"wall_time_seconds", 0.0}};
  }
  static nlohmann::json timeout() {
    return {{"status", "timeout"}, {"wall_time_seconds", 0.0}};
  }

 private:
  std::mutex mu_;
  std::map<std::string, Behavior> scripts_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace stub
