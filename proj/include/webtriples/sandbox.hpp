#pragma once

// Wire protocol with the script runner: one JSON request on the runner's
// stdin, one JSON response line on its stdout.

#include <array>
#include <chrono>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/subprocess.hpp"
#include "webtriples/triple_core.hpp"

namespace webtriples {

inline constexpr double kSandboxTimeoutCeiling = 60.0;
inline constexpr std::size_t kTracebackTailLimit = 4000;

struct SandboxRequest {
  std::string script_source;
  std::string html;
  double timeout_seconds = 30.0;
  std::size_t max_triples = 10000;

  friend bool operator==(const SandboxRequest&, const SandboxRequest&) = default;
};

enum class SandboxStatus { Ok, Error, Timeout };

struct SandboxResponse {
  SandboxStatus status = SandboxStatus::Ok;
  std::vector<std::array<std::string, 3>> triples;  // Ok only
  bool truncated = false;
  std::string error_message;   // Error only
  std::string traceback_tail;  // Error only
  double wall_time_seconds = 0.0;

  friend bool operator==(const SandboxResponse&,
                         const SandboxResponse&) = default;
};

inline std::string_view to_string(SandboxStatus s) {
  switch (s) {
    case SandboxStatus::Ok: return "ok";
    case SandboxStatus::Error: return "error";
    case SandboxStatus::Timeout: return "timeout";
  }
  return "error";
}

inline nlohmann::json to_json(const SandboxRequest& r) {
  return {{"script_source", r.script_source},
          {"html", r.html},
          {"timeout_seconds", r.timeout_seconds},
          {"max_triples", r.max_triples}};
}

inline SandboxRequest sandbox_request_from_json(const nlohmann::json& j) {
  SandboxRequest r;
  try {
    r.script_source = j.at("script_source").get<std::string>();
    r.html = j.at("html").get<std::string>();
    r.timeout_seconds = j.at("timeout_seconds").get<double>();
    r.max_triples = j.at("max_triples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sandbox request: ") + e.what());
  }
  if (!(r.timeout_seconds > 0) || r.timeout_seconds > kSandboxTimeoutCeiling) {
    throw DataError("sandbox timeout out of range");
  }
  if (r.max_triples == 0) throw DataError("max_triples must be positive");
  return r;
}

inline nlohmann::json to_json(const SandboxResponse& r) {
  nlohmann::json j = {{"status", to_string(r.status)},
                      {"wall_time_seconds", r.wall_time_seconds}};
  if (r.status == SandboxStatus::Ok) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : r.triples) rows.push_back({t[0], t[1], t[2]});
    j["triples"] = std::move(rows);
    j["truncated"] = r.truncated;
  } else if (r.status == SandboxStatus::Error) {
    j["error_message"] = r.error_message;
    j["traceback_tail"] = r.traceback_tail;
  }
  return j;
}

/// Parses and validates a runner response. Any violation of the protocol is
/// a SandboxError of kind BadOutput; malformed rows name their index.
inline SandboxResponse sandbox_response_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& what) {
    return SandboxError(SandboxErrorKind::BadOutput, what);
  };
  if (!j.is_object()) throw bad("response is not a JSON object");
  SandboxResponse r;
  auto status = j.find("status");
  if (status == j.end() || !status->is_string()) throw bad("missing status");
  const std::string s = status->get<std::string>();
  if (s == "ok") {
    r.status = SandboxStatus::Ok;
  } else if (s == "error") {
    r.status = SandboxStatus::Error;
  } else if (s == "timeout") {
    r.status = SandboxStatus::Timeout;
  } else {
    throw bad("unknown status \"" + s + "\"");
  }
  if (auto w = j.find("wall_time_seconds"); w != j.end() && w->is_number()) {
    r.wall_time_seconds = w->get<double>();
  }
  if (r.status == SandboxStatus::Ok) {
    auto rows = j.find("triples");
    if (rows == j.end() || !rows->is_array()) throw bad("ok without triples");
    for (std::size_t i = 0; i < rows->size(); ++i) {
      const auto& row = (*rows)[i];
      if (!row.is_array() || row.size() != 3 || !row[0].is_string() ||
          !row[1].is_string() || !row[2].is_string()) {
        throw bad("malformed triple at row " + std::to_string(i) + ": " +
                  row.dump());
      }
      r.triples.push_back({row[0].get<std::string>(), row[1].get<std::string>(),
                           row[2].get<std::string>()});
    }
    if (auto t = j.find("truncated"); t != j.end() && t->is_boolean()) {
      r.truncated = t->get<bool>();
    }
  } else if (r.status == SandboxStatus::Error) {
    auto msg = j.find("error_message");
    if (msg == j.end() || !msg->is_string()) {
      throw bad("error without error_message");
    }
    r.error_message = msg->get<std::string>();
    if (auto tb = j.find("traceback_tail"); tb != j.end() && tb->is_string()) {
      r.traceback_tail = tb->get<std::string>();
    }
    if (r.traceback_tail.size() > kTracebackTailLimit) {
      r.traceback_tail.erase(0, r.traceback_tail.size() - kTracebackTailLimit);
    }
  }
  return r;
}

/// Parses the runner's stdout: the last nonblank line must be the response.
inline SandboxResponse parse_sandbox_output(std::string_view out) {
  std::size_t end = out.find_last_not_of(" \t\r\n");
  if (end == std::string_view::npos) {
    throw SandboxError(SandboxErrorKind::Crash, "runner produced no response");
  }
  std::size_t start = out.rfind('\n', end);
  start = start == std::string_view::npos ? 0 : start + 1;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(out.substr(start, end - start + 1));
  } catch (const nlohmann::json::parse_error& e) {
    throw SandboxError(SandboxErrorKind::BadOutput,
                       std::string("response is not JSON: ") + e.what());
  }
  return sandbox_response_from_json(j);
}

/// A script runner reachable through the line protocol.
class Sandbox {
 public:
  virtual ~Sandbox() = default;
  /// Sends one request document and returns the runner's raw stdout.
  virtual std::string exchange(const std::string& request_json,
                               double timeout_seconds) = 0;

  SandboxResponse run(const SandboxRequest& request) {
    return parse_sandbox_output(
        exchange(to_json(request).dump(), request.timeout_seconds));
  }
};

/// Spawns one runner process per request.
class ProcessSandbox : public Sandbox {
 public:
  /// `command` is run through /bin/sh -c. The host allows `grace_seconds`
  /// beyond the request timeout before killing the runner.
  explicit ProcessSandbox(std::string command, double grace_seconds = 5.0)
      : command_(std::move(command)), grace_seconds_(grace_seconds) {}

  std::string exchange(const std::string& request_json,
                       double timeout_seconds) override {
    ProcessOptions options;
    options.timeout = std::chrono::milliseconds(
        static_cast<long long>((timeout_seconds + grace_seconds_) * 1000));
    ProcessResult r = run_shell(command_, request_json + "\n", options);
    if (r.timed_out) {
      throw SandboxError(SandboxErrorKind::Timeout,
                         "runner killed after " +
                             std::to_string(timeout_seconds + grace_seconds_) +
                             " s");
    }
    if (r.signaled || r.exit_code != 0) {
      std::string why = r.signaled ? "signal " + std::to_string(r.signal)
                                   : "exit code " + std::to_string(r.exit_code);
      std::string tail = r.err.size() > kTracebackTailLimit
                             ? r.err.substr(r.err.size() - kTracebackTailLimit)
                             : r.err;
      throw SandboxError(SandboxErrorKind::Crash,
                         "runner died (" + why + "): " + tail);
    }
    return r.out;
  }

 private:
  std::string command_;
  double grace_seconds_;
};

}  // namespace webtriples
