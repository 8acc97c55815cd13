#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/triple_core.hpp"

namespace webtriples {

/// Number of leading response tokens searched by the appearance rule.
inline constexpr std::size_t kAppearanceWindow = 50;

/// True iff the normalized ground truth is a substring of the first 50
/// whitespace tokens of the normalized response.
inline bool accuracy_appearance(std::string_view ground_truth,
                                std::string_view response,
                                std::size_t window = kAppearanceWindow) {
  const std::string truth = normalize_text(ground_truth);
  const std::string norm = normalize_text(response);
  std::string head;
  std::size_t taken = 0;
  std::size_t pos = 0;
  // normalize_text leaves single ASCII spaces between tokens.
  while (pos < norm.size() && taken < window) {
    std::size_t sp = norm.find(' ', pos);
    std::size_t end = sp == std::string::npos ? norm.size() : sp;
    if (!head.empty()) head += ' ';
    head.append(norm, pos, end - pos);
    ++taken;
    pos = end + 1;
  }
  return head.find(truth) != std::string::npos;
}

/// Returns the judge model's raw reply for (question, ground truth,
/// response). Throws JudgeUnavailable on transport failure.
using QaJudge = std::function<std::string(const std::string& question,
                                          const std::string& ground_truth,
                                          const std::string& response)>;

/// Reads a "correct" / "incorrect" verdict from the first word of a reply,
/// ignoring case and surrounding punctuation.
inline bool parse_qa_verdict(std::string_view reply) {
  const std::string norm = normalize_text(reply);
  std::string_view first = norm;
  if (auto sp = first.find(' '); sp != std::string_view::npos) {
    first = first.substr(0, sp);
  }
  if (first.rfind("incorrect", 0) == 0) return false;
  if (first.rfind("correct", 0) == 0) return true;
  throw JudgeVerdictUnparseable(std::string(reply));
}

struct JudgedAnswer {
  bool correct = false;
  std::size_t judge_calls = 0;
};

/// Two-stage check: an exact normalized match is accepted without a judge
/// call; otherwise the judge's verdict decides.
inline JudgedAnswer accuracy_judge(const std::string& question,
                                   const std::string& ground_truth,
                                   const std::string& response,
                                   const QaJudge& judge) {
  if (normalize_text(response) == normalize_text(ground_truth)) {
    return {true, 0};
  }
  return {parse_qa_verdict(judge(question, ground_truth, response)), 1};
}

struct QAOutcome {
  std::string page_id;
  std::string question;
  std::string ground_truth;
  std::string response;
  bool correct_A = false;
  std::optional<bool> correct_LM;       // absent without a judge
  std::optional<std::string> judge_failure;  // unparseable verdict text
};

inline nlohmann::json to_json(const QAOutcome& o) {
  nlohmann::json j = {{"page_id", o.page_id},
                      {"question", o.question},
                      {"ground_truth", o.ground_truth},
                      {"response", o.response},
                      {"correct_A", o.correct_A}};
  j["correct_LM"] =
      o.correct_LM ? nlohmann::json(*o.correct_LM) : nlohmann::json(nullptr);
  if (o.judge_failure) j["judge_failure"] = *o.judge_failure;
  return j;
}

/// Scores one QA response. With a judge, an unparseable verdict is recorded
/// in judge_failure and leaves correct_LM empty.
inline QAOutcome score_answer(const QAPair& qa, std::string response,
                              const QaJudge* judge) {
  QAOutcome o;
  o.page_id = qa.page_id;
  o.question = qa.question;
  o.ground_truth = qa.answer;
  o.response = std::move(response);
  o.correct_A = accuracy_appearance(o.ground_truth, o.response);
  if (judge) {
    try {
      o.correct_LM =
          accuracy_judge(o.question, o.ground_truth, o.response, *judge)
              .correct;
    } catch (const JudgeVerdictUnparseable& e) {
      o.judge_failure = e.verdict();
    }
  }
  return o;
}

struct QAAggregate {
  double accuracy_A = 0;
  std::optional<double> accuracy_LM;
  std::size_t n = 0;
  std::size_t judge_failures = 0;
};

/// accuracy_A over all outcomes; accuracy_LM over outcomes with a parsed
/// verdict. Without a judge accuracy_LM stays empty.
inline QAAggregate aggregate_qa(const std::vector<QAOutcome>& outcomes,
                                bool with_judge) {
  QAAggregate agg;
  agg.n = outcomes.size();
  std::size_t correct_a = 0, correct_lm = 0, judged = 0;
  for (const auto& o : outcomes) {
    correct_a += o.correct_A ? 1 : 0;
    if (o.judge_failure) ++agg.judge_failures;
    if (o.correct_LM) {
      ++judged;
      correct_lm += *o.correct_LM ? 1 : 0;
    }
  }
  if (agg.n > 0) {
    agg.accuracy_A = static_cast<double>(correct_a) / static_cast<double>(agg.n);
  }
  if (with_judge) {
    agg.accuracy_LM = judged == 0 ? 0.0
                                  : static_cast<double>(correct_lm) /
                                        static_cast<double>(judged);
  }
  return agg;
}

inline nlohmann::json to_json(const QAAggregate& a) {
  return {{"accuracy_A", a.accuracy_A},
          {"accuracy_LM", a.accuracy_LM ? nlohmann::json(*a.accuracy_LM)
                                        : nlohmann::json(nullptr)},
          {"n", a.n},
          {"judge_failures", a.judge_failures}};
}

}  // namespace webtriples
