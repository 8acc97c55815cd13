#pragma once

// Generation, refinement and selection of per-site extraction scripts.
//
// forge() issues one two-sample generation, then for each exemplar one
// base generation followed by `iterations` feedback rounds in which the
// previous script is executed on that exemplar and its result fed back.
// Every candidate is then re-executed on both exemplars and the one with
// the highest mean exact-match score wins (earliest on ties).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/llm_gateway.hpp"
#include "webtriples/match_metrics.hpp"
#include "webtriples/page_model.hpp"
#include "webtriples/prompts.hpp"
#include "webtriples/sandbox.hpp"
#include "webtriples/triple_core.hpp"

namespace webtriples {

struct ExemplarSample {
  std::string id;
  std::string html;
  std::string title;
  TripleList triples;
  bool pseudo_labels = false;  // triples come from a few-shot extractor

  void validate() const {
    if (html.empty()) throw DataError("exemplar " + id + " has empty html");
    if (triples.empty()) throw DataError("exemplar " + id + " has no triples");
  }
};

struct ScriptOrigin {
  enum class Kind { TwoSample, OneSample, Feedback };
  Kind kind = Kind::TwoSample;
  std::string sample_id;  // OneSample, Feedback
  int iteration = 0;      // Feedback: 1..k

  friend bool operator==(const ScriptOrigin&, const ScriptOrigin&) = default;
};

struct ScriptCandidate {
  std::string source;
  ScriptOrigin origin;
  std::optional<double> exemplar_score;
};

/// Outcome of executing a script on one page.
struct ExecResult {
  std::variant<TripleList, std::string> outcome;  // triples or error text
  double wall_time_seconds = 0.0;
  bool truncated = false;

  bool ok() const { return std::holds_alternative<TripleList>(outcome); }
  const TripleList& triples() const { return std::get<TripleList>(outcome); }
  const std::string& error() const { return std::get<std::string>(outcome); }
};

struct ForgeOptions {
  std::string model;
  int iterations = 3;
  std::size_t max_output_tokens = 8192;
  double exec_timeout_seconds = 30.0;
  std::size_t max_triples = 10000;
  std::size_t workers = 1;  // parallel candidate executions during selection
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// Input framing shared by the prompts and by execution.
inline std::string frame_html(std::string_view title, std::string_view html) {
  return "<head><title>" + std::string(title) + "</title></head>\n" +
         std::string(html);
}

/// Returns the body of the first ``` or ```lang fenced block, or the trimmed
/// reply when it has no fence.
inline std::string strip_code_fences(std::string_view reply) {
  std::size_t open = reply.find("```");
  if (open == std::string_view::npos) {
    return std::string(detail::trim_ascii(reply));
  }
  std::size_t body = reply.find('\n', open + 3);
  if (body == std::string_view::npos) {
    return std::string(detail::trim_ascii(reply.substr(open + 3)));
  }
  ++body;
  std::size_t close = reply.find("```", body);
  std::string_view inner = reply.substr(
      body, close == std::string_view::npos ? std::string_view::npos
                                            : close - body);
  while (!inner.empty() && (inner.back() == '\n' || inner.back() == '\r' ||
                            inner.back() == ' ')) {
    inner.remove_suffix(1);
  }
  return std::string(inner);
}

/// Text fed back to the model as "# Execution result".
inline std::string describe_exec_result(const ExecResult& r) {
  if (!r.ok()) return r.error();
  if (r.triples().empty()) return "[]";
  std::string s = to_paren_lines(r.triples());
  if (r.truncated) s += "\n(output truncated)";
  return s;
}

inline TripleList triples_from_response(const SandboxResponse& r) {
  TripleList out;
  out.reserve(r.triples.size());
  for (const auto& t : r.triples) out.emplace_back(t[0], t[1], t[2]);
  return out;
}

/// Executes a script on framed html. Script failures of any kind become an
/// error outcome rather than an exception.
inline ExecResult execute_script(Sandbox& sandbox, const std::string& source,
                                 const std::string& framed_html,
                                 const ForgeOptions& options) {
  SandboxRequest req{source, framed_html, options.exec_timeout_seconds,
                     options.max_triples};
  ExecResult result;
  try {
    const SandboxResponse r = sandbox.run(req);
    result.wall_time_seconds = r.wall_time_seconds;
    switch (r.status) {
      case SandboxStatus::Ok:
        result.outcome = triples_from_response(r);
        result.truncated = r.truncated;
        break;
      case SandboxStatus::Error:
        result.outcome = r.traceback_tail.empty()
                             ? r.error_message
                             : r.error_message + "\n" + r.traceback_tail;
        break;
      case SandboxStatus::Timeout:
        result.outcome = "TimeoutError: execution exceeded " +
                         std::to_string(options.exec_timeout_seconds) + " s";
        break;
    }
  } catch (const SandboxError& e) {
    result.outcome = std::string(e.what());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct ScriptFeedback {
  std::string previous_source;
  ExecResult result;
  int iteration = 1;
};

/// One call to the model. Two samples use the two-sample prompt; one sample
/// the single-sample prompt, or the fix/improve prompt when feedback is
/// given (which requires exactly one sample).
inline ScriptCandidate generate_script(std::span<const ExemplarSample> samples,
                                       const std::optional<ScriptFeedback>& feedback,
                                       const Gateway& gateway,
                                       const ForgeOptions& options) {
  if (samples.empty() || samples.size() > 2) {
    throw Error("generate_script takes one or two samples");
  }
  if (feedback && samples.size() != 1) {
    throw Error("feedback generation takes exactly one sample");
  }
  RenderedPrompt prompt;
  ScriptOrigin origin;
  if (samples.size() == 2) {
    prompt = render(PromptId::ScriptGen_TwoSample,
                    {{"title_1", samples[0].title},
                     {"html_1", samples[0].html},
                     {"triples_1", to_paren_lines(samples[0].triples)},
                     {"title_2", samples[1].title},
                     {"html_2", samples[1].html},
                     {"triples_2", to_paren_lines(samples[1].triples)}});
    origin = {ScriptOrigin::Kind::TwoSample, {}, 0};
  } else if (!feedback) {
    prompt = render(PromptId::ScriptGen_OneSample,
                    {{"title", samples[0].title},
                     {"html", samples[0].html},
                     {"triples", to_paren_lines(samples[0].triples)}});
    origin = {ScriptOrigin::Kind::OneSample, samples[0].id, 0};
  } else {
    prompt = render(PromptId::ScriptGen_Feedback,
                    {{"title", samples[0].title},
                     {"html", samples[0].html},
                     {"triples", to_paren_lines(samples[0].triples)},
                     {"previous_script", feedback->previous_source},
                     {"execution_result", describe_exec_result(feedback->result)}});
    origin = {ScriptOrigin::Kind::Feedback, samples[0].id, feedback->iteration};
  }
  ChatRequest req = ChatRequest::from_prompt(options.model, prompt);
  req.max_output_tokens = options.max_output_tokens;
  std::string source = strip_code_fences(gateway.complete(req).text);
  if (source.empty()) throw EmptyScript();
  return {std::move(source), std::move(origin), std::nullopt};
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct CandidateEvaluation {
  std::vector<double> scores;            // per candidate, mean EM
  std::vector<std::size_t> executed;     // successful executions (0..2)
  std::size_t best = 0;
};

inline double exemplar_em(const ExecResult& r, const ExemplarSample& s) {
  if (!r.ok()) return 0.0;
  return em_metrics(prepare_for_evaluation(r.triples()),
                    prepare_for_evaluation(s.triples))
      .em;
}

/// Scores every candidate on both exemplars (mean EM, 0 for a failed run)
/// and picks the argmax; ties go to the earliest candidate.
inline CandidateEvaluation evaluate_candidates(
    const std::vector<ScriptCandidate>& cands, const ExemplarSample& a,
    const ExemplarSample& b, Sandbox& sandbox, const ForgeOptions& options) {
  if (cands.empty()) throw Error("no candidate scripts");
  CandidateEvaluation ev;
  ev.scores.assign(cands.size(), 0.0);
  ev.executed.assign(cands.size(), 0);
  const std::string framed_a = frame_html(a.title, a.html);
  const std::string framed_b = frame_html(b.title, b.html);

  auto score_one = [&](std::size_t i) {
    const ExecResult ra = execute_script(sandbox, cands[i].source, framed_a, options);
    const ExecResult rb = execute_script(sandbox, cands[i].source, framed_b, options);
    ev.scores[i] = (exemplar_em(ra, a) + exemplar_em(rb, b)) / 2.0;
    ev.executed[i] = (ra.ok() ? 1 : 0) + (rb.ok() ? 1 : 0);
  };
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(options.workers, cands.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < cands.size(); ++i) score_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cands.size(); i = next++) score_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (ev.scores[i] > ev.scores[ev.best]) ev.best = i;
  }
  return ev;
}

inline ScriptCandidate select_best_script(std::vector<ScriptCandidate> cands,
                                          const ExemplarSample& a,
                                          const ExemplarSample& b,
                                          Sandbox& sandbox,
                                          const ForgeOptions& options = {}) {
  const auto ev = evaluate_candidates(cands, a, b, sandbox, options);
  ScriptCandidate best = std::move(cands[ev.best]);
  best.exemplar_score = ev.scores[ev.best];
  return best;
}

// ---------------------------------------------------------------------------
// Forge
// ---------------------------------------------------------------------------

struct ForgeResult {
  ScriptCandidate best;
  std::vector<ScriptCandidate> log;  // generation order, scores filled in
};

/// Number of candidates forge() produces for `iterations` feedback rounds.
constexpr std::size_t forge_candidate_count(int iterations) {
  return 1 + 2 * (1 + static_cast<std::size_t>(iterations));
}

inline ForgeResult forge(const ExemplarSample& a, const ExemplarSample& b,
                         const Gateway& gateway, Sandbox& sandbox,
                         const ForgeOptions& options = {}) {
  a.validate();
  b.validate();
  if (options.iterations < 0) throw Error("iterations must be >= 0");

  std::vector<ScriptCandidate> cands;
  const ExemplarSample pair[] = {a, b};
  cands.push_back(generate_script(pair, std::nullopt, gateway, options));
  for (const ExemplarSample& s : pair) {
    std::span<const ExemplarSample> one(&s, 1);
    cands.push_back(generate_script(one, std::nullopt, gateway, options));
    const std::string framed = frame_html(s.title, s.html);
    for (int i = 1; i <= options.iterations; ++i) {
      const std::string previous = cands.back().source;
      ExecResult result = execute_script(sandbox, previous, framed, options);
      cands.push_back(generate_script(
          one, ScriptFeedback{previous, std::move(result), i}, gateway,
          options));
    }
  }

  const auto ev = evaluate_candidates(cands, a, b, sandbox, options);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    cands[i].exemplar_score = ev.scores[i];
  }
  if (std::all_of(ev.executed.begin(), ev.executed.end(),
                  [](std::size_t n) { return n == 0; })) {
    std::ostringstream msg;
    msg << "all " << cands.size()
        << " candidate scripts failed to execute on both exemplars";
    throw ForgeFailed(msg.str());
  }
  return {cands[ev.best], std::move(cands)};
}

// ---------------------------------------------------------------------------
// Using a forged script
// ---------------------------------------------------------------------------

/// Runs a script on a page. Timeouts, runner crashes, script exceptions and
/// protocol violations raise SandboxError.
inline TripleList extract_with_script(const ScriptCandidate& script,
                                      const PageDocument& page,
                                      Sandbox& sandbox,
                                      const ForgeOptions& options = {}) {
  SandboxRequest req{script.source, frame_html(page.title, page.html),
                     options.exec_timeout_seconds, options.max_triples};
  const SandboxResponse r = sandbox.run(req);
  switch (r.status) {
    case SandboxStatus::Ok: return triples_from_response(r);
    case SandboxStatus::Timeout:
      throw SandboxError(SandboxErrorKind::Timeout,
                         "script exceeded " +
                             std::to_string(options.exec_timeout_seconds) + " s");
    case SandboxStatus::Error:
      throw SandboxError(SandboxErrorKind::Crash, r.error_message);
  }
  throw SandboxError(SandboxErrorKind::BadOutput, "unknown status");
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ScriptOrigin& o) {
  switch (o.kind) {
    case ScriptOrigin::Kind::TwoSample: return {{"kind", "two_sample"}};
    case ScriptOrigin::Kind::OneSample:
      return {{"kind", "one_sample"}, {"sample", o.sample_id}};
    case ScriptOrigin::Kind::Feedback:
      return {{"kind", "feedback"},
              {"sample", o.sample_id},
              {"iteration", o.iteration}};
  }
  return {};
}

inline ScriptOrigin script_origin_from_json(const nlohmann::json& j) {
  ScriptOrigin o;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "two_sample") {
    o.kind = ScriptOrigin::Kind::TwoSample;
  } else if (kind == "one_sample") {
    o.kind = ScriptOrigin::Kind::OneSample;
    o.sample_id = j.at("sample").get<std::string>();
  } else if (kind == "feedback") {
    o.kind = ScriptOrigin::Kind::Feedback;
    o.sample_id = j.at("sample").get<std::string>();
    o.iteration = j.at("iteration").get<int>();
    if (o.iteration < 1) throw DataError("feedback iteration must be >= 1");
  } else {
    throw DataError("unknown script origin: " + kind);
  }
  return o;
}

inline std::filesystem::path script_artifact_path(
    const std::filesystem::path& dir, const std::string& site_id) {
  std::string name;
  for (char c : site_id) {
    name += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
             c == '-' || c == '_')
                ? c
                : '_';
  }
  return dir / (name + ".json");
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

inline void save_script_artifact(const std::filesystem::path& dir,
                                 const std::string& site_id,
                                 const ScriptCandidate& script) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = {{"site_id", site_id},
                      {"source", script.source},
                      {"origin", to_json(script.origin)},
                      {"exemplar_score", script.exemplar_score
                                             ? nlohmann::json(*script.exemplar_score)
                                             : nlohmann::json(nullptr)},
                      {"created_at", utc_timestamp()}};
  std::ofstream out(script_artifact_path(dir, site_id));
  if (!out) throw DataError("cannot write script artifact for " + site_id);
  out << j.dump(2) << '\n';
}

/// Loads the artifact for a site; nullopt when none exists.
inline std::optional<ScriptCandidate> load_script_artifact(
    const std::filesystem::path& dir, const std::string& site_id) {
  const auto path = script_artifact_path(dir, site_id);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    ScriptCandidate c;
    c.source = j.at("source").get<std::string>();
    c.origin = script_origin_from_json(j.at("origin"));
    if (j.contains("exemplar_score") && !j["exemplar_score"].is_null()) {
      c.exemplar_score = j["exemplar_score"].get<double>();
    }
    if (c.source.empty()) throw DataError("empty script source");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace webtriples
