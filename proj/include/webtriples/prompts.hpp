#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "webtriples/error.hpp"

namespace webtriples {

enum class PromptId {
  QaJudge,
  TripleJudge,
  TE_ZeroShot,
  TE_FewShot,
  ScriptGen_OneSample,
  ScriptGen_TwoSample,
  ScriptGen_Feedback,
  QA_WithRef,
  QA_NoRef,
  QA_FewShot,
};

using PromptVars = std::map<std::string, std::string, std::less<>>;

struct RenderedPrompt {
  std::string system;
  std::string user;

  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

namespace detail {

inline bool is_placeholder_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

/// Calls on_text / on_placeholder for each piece of a template. A
/// placeholder is "{name}" with name in [a-z0-9_]+; any other brace is text.
template <typename Text, typename Hole>
void scan_template(std::string_view tpl, Text&& on_text, Hole&& on_hole) {
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    std::size_t open = tpl.find('{', pos);
    if (open == std::string_view::npos) {
      on_text(tpl.substr(pos));
      return;
    }
    std::size_t end = open + 1;
    while (end < tpl.size() && is_placeholder_char(tpl[end])) ++end;
    if (end < tpl.size() && tpl[end] == '}' && end > open + 1) {
      on_text(tpl.substr(pos, open - pos));
      on_hole(tpl.substr(open + 1, end - open - 1));
      pos = end + 1;
    } else {
      on_text(tpl.substr(pos, open + 1 - pos));
      pos = open + 1;
    }
  }
}

inline std::string substitute(std::string_view tpl, const PromptVars& vars) {
  std::string out;
  out.reserve(tpl.size());
  scan_template(
      tpl, [&](std::string_view text) { out.append(text); },
      [&](std::string_view name) {
        auto it = vars.find(name);
        if (it == vars.end()) throw MissingPlaceholder(std::string(name));
        out.append(it->second);
      });
  return out;
}

}  // namespace detail

struct PromptTemplate {
  PromptId id;
  std::string system;
  std::string user;

  /// Placeholder names used by system and user text.
  std::set<std::string> placeholders() const {
    std::set<std::string> names;
    auto collect = [&](std::string_view tpl) {
      detail::scan_template(
          tpl, [](std::string_view) {},
          [&](std::string_view n) { names.emplace(n); });
    };
    collect(system);
    collect(user);
    return names;
  }

  /// Byte-exact substitution. Values are inserted verbatim and never
  /// rescanned. Throws MissingPlaceholder.
  RenderedPrompt render(const PromptVars& vars) const {
    return {detail::substitute(system, vars), detail::substitute(user, vars)};
  }
};

namespace prompt_text {

inline constexpr std::string_view kExtractionInstruction =
    "You are given a doc in HTML and its title. Please return all (subject, "
    "predicate, object) triples that can be extracted from the doc, in the "
    "order they appear in the doc. Subject, predicate, and object should "
    "generally be gained from the text spans in the doc or the title. Please "
    "only include complete triples; if for any section the predicate or "
    "object is missing from the doc, you may skip it. Each line in your "
    "response should be a triple.";

inline constexpr std::string_view kExtractionUser =
    "### title\n{title}\n### HTML\n{html}";

inline constexpr std::string_view kScriptSystem =
    "Your task is to write a program following the instruction. Your "
    "response should be a Python function(html: str) only without extra "
    "words.";

inline constexpr std::string_view kScriptRules =
    "The return value should be a list of triples, in the order they appear "
    "in the html.\n"
    "Subject, predicate, and object should generally be gained from the text "
    "spans in the doc.\n"
    "The return value should only include complete triples; if for any "
    "section the predicate or object is missing from the doc, it may be "
    "skipped.\n";

inline constexpr std::string_view kQaInstruction =
    "You are given a question and a reference that may or may not help "
    "answer the question. Please answer the question. Be concise.";

inline constexpr std::string_view kQaUser =
    "### Question\n{question}\n### Reference\n{reference}";

}  // namespace prompt_text

/// System text of the extraction prompt with `shots` demonstrations; the
/// k-th uses {title_k}, {html_k} and {triples_k}.
inline std::string few_shot_extraction_system(std::size_t shots) {
  std::string s(prompt_text::kExtractionInstruction);
  for (std::size_t k = 1; k <= shots; ++k) {
    const std::string n = std::to_string(k);
    s += "\n# Example " + n + "\n### Input\ntitle:\n{title_" + n +
         "}\nHTML:\n{html_" + n + "}\n### Output\n{triples_" + n + "}";
  }
  return s;
}

/// System text of the QA prompt with `shots` demonstrations.
inline std::string few_shot_qa_system(std::size_t shots) {
  std::string s(prompt_text::kQaInstruction);
  for (std::size_t k = 1; k <= shots; ++k) {
    const std::string n = std::to_string(k);
    s += "\n# Example " + n + "\n### Question\n{question_" + n +
         "}\n### Reference\n{reference_" + n + "}\n### Output\n{answer_" + n +
         "}";
  }
  return s;
}

inline PromptTemplate prompt_template(PromptId id) {
  using namespace prompt_text;
  switch (id) {
    case PromptId::QaJudge:
      return {id,
              "You need to check whether the prediction of a "
              "question-answering system to a question is correct. You should "
              "make the judgment based on the ground truth answer provided to "
              "you.\nYour response should be \"correct\" if the prediction is "
              "correct or \"incorrect\" if the prediction is wrong.",
              "Question: {question}\nGround truth: {ground_truth}\n"
              "Prediction: {prediction}\nCorrectness:"};
    case PromptId::TripleJudge:
      return {id,
              "You are given two (subject, predicate, object) triples. Your "
              "response should be \"Yes\" if the triples are semantically the "
              "same or \"No\" if they are semantically different.",
              "{triple_1}\n{triple_2}"};
    case PromptId::TE_ZeroShot:
      return {id, std::string(kExtractionInstruction),
              std::string(kExtractionUser)};
    case PromptId::TE_FewShot:
      return {id, few_shot_extraction_system(2), std::string(kExtractionUser)};
    case PromptId::ScriptGen_OneSample:
      return {id, std::string(kScriptSystem),
              "Please write a Python function parse(html: str) to extract all "
              "(subject, predicate, object) triples from the html.\n" +
                  std::string(kScriptRules) +
                  "Below is an sample of Input and Output\n"
                  "# Input (html)\n"
                  "<head><title>{title}</title></head>\n"
                  "{html}\n"
                  "# Output (triples)\n"
                  "{triples}"};
    case PromptId::ScriptGen_TwoSample:
      return {id, std::string(kScriptSystem),
              "Please write a Python function parse(html: str) to extract all "
              "(subject, predicate, object) triples from the html.\n" +
                  std::string(kScriptRules) +
                  "Below are two samples of Input and Output\n"
                  "# Sample 1\n"
                  "## Input (html)\n"
                  "<head><title>{title_1}</title></head>\n"
                  "{html_1}\n"
                  "## Output (triples)\n"
                  "{triples_1}\n"
                  "# Sample 2\n"
                  "## Input (html)\n"
                  "<head><title>{title_2}</title></head>\n"
                  "{html_2}\n"
                  "## Output (triples)\n"
                  "{triples_2}"};
    case PromptId::ScriptGen_Feedback:
      return {id,
              "Your task is to fix/improve a program following the "
              "instruction if possible. Your response should be a Python "
              "function(html: str) only without extra words.",
              "Please fix/improve a Python function parse(html: str) to "
              "extract all (subject, predicate, object) triples from the "
              "html.\n" +
                  std::string(kScriptRules) +
                  "Below is an sample of Input and Output\n"
                  "# Input (html)\n"
                  "<head><title>{title}</title></head>\n"
                  "{html}\n"
                  "# Output (triples)\n"
                  "{triples}\n"
                  "Here is the function and its execution result given the "
                  "sample input:\n"
                  "# Function\n"
                  "{previous_script}\n"
                  "# Execution result\n"
                  "{execution_result}"};
    case PromptId::QA_WithRef:
      return {id, std::string(kQaInstruction), std::string(kQaUser)};
    case PromptId::QA_NoRef:
      return {id, "Please answer the question. Be concise.",
              "### Question\n{question}"};
    case PromptId::QA_FewShot:
      return {id, few_shot_qa_system(2), std::string(kQaUser)};
  }
  throw Error("unknown prompt id");
}

inline RenderedPrompt render(PromptId id, const PromptVars& vars) {
  return prompt_template(id).render(vars);
}

inline std::string_view prompt_name(PromptId id) {
  switch (id) {
    case PromptId::QaJudge: return "QaJudge";
    case PromptId::TripleJudge: return "TripleJudge";
    case PromptId::TE_ZeroShot: return "TE_ZeroShot";
    case PromptId::TE_FewShot: return "TE_FewShot";
    case PromptId::ScriptGen_OneSample: return "ScriptGen_OneSample";
    case PromptId::ScriptGen_TwoSample: return "ScriptGen_TwoSample";
    case PromptId::ScriptGen_Feedback: return "ScriptGen_Feedback";
    case PromptId::QA_WithRef: return "QA_WithRef";
    case PromptId::QA_NoRef: return "QA_NoRef";
    case PromptId::QA_FewShot: return "QA_FewShot";
  }
  return "unknown";
}

}  // namespace webtriples
