#pragma once

// Model-backed judges for the LM metric families.

#include <memory>
#include <string>

#include "webtriples/llm_gateway.hpp"
#include "webtriples/match_metrics.hpp"
#include "webtriples/prompts.hpp"
#include "webtriples/qa_metrics.hpp"

namespace webtriples {

namespace detail {

inline std::string ask_judge(const Gateway& gateway, const std::string& model,
                             const RenderedPrompt& prompt,
                             std::size_t max_output_tokens) {
  ChatRequest req = ChatRequest::from_prompt(model, prompt);
  req.max_output_tokens = max_output_tokens;
  req.temperature = 0.0;
  try {
    return gateway.complete(req).text;
  } catch (const TransportFailed& e) {
    throw JudgeUnavailable(std::string("judge transport failed: ") + e.what());
  } catch (const ReplayMiss& e) {
    throw JudgeUnavailable(std::string("judge replay miss: ") + e.what());
  } catch (const ContextOverflow& e) {
    throw JudgeUnavailable(std::string("judge prompt too long: ") + e.what());
  }
}

}  // namespace detail

/// True iff the first word of the reply starts with "yes" (any case). Any
/// other reply, including an unreadable one, counts as "no".
inline bool parse_triple_verdict(std::string_view reply) {
  const std::string norm = normalize_text(reply);
  return norm.rfind("yes", 0) == 0;
}

inline TripleJudge make_triple_judge(std::shared_ptr<const Gateway> gateway,
                                     std::string model,
                                     std::size_t max_output_tokens = 16) {
  return [gateway = std::move(gateway), model = std::move(model),
          max_output_tokens](const Triple& pred, const Triple& gold) {
    const auto prompt = render(PromptId::TripleJudge,
                               {{"triple_1", to_paren(pred)},
                                {"triple_2", to_paren(gold)}});
    return parse_triple_verdict(
        detail::ask_judge(*gateway, model, prompt, max_output_tokens));
  };
}

inline QaJudge make_qa_judge(std::shared_ptr<const Gateway> gateway,
                             std::string model,
                             std::size_t max_output_tokens = 16) {
  return [gateway = std::move(gateway), model = std::move(model),
          max_output_tokens](const std::string& question,
                             const std::string& ground_truth,
                             const std::string& response) {
    const auto prompt = render(PromptId::QaJudge,
                               {{"question", question},
                                {"ground_truth", ground_truth},
                                {"prediction", response}});
    return detail::ask_judge(*gateway, model, prompt, max_output_tokens);
  };
}

}  // namespace webtriples
