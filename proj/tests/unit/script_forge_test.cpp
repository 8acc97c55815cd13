#include <gtest/gtest.h>

#include <map>

#include "forms_table.hpp"
#include "stub_sandbox.hpp"
#include "webtriples/script_forge.hpp"

using namespace webtriples;
using stub::StubSandbox;

namespace {

TripleList numbered(const std::string& prefix, int n) {
  TripleList out;
  for (int i = 0; i < n; ++i) {
    out.emplace_back(prefix + std::to_string(i), "value", "v" + std::to_string(i));
  }
  return out;
}

ExemplarSample sample(const std::string& id, TripleList triples) {
  return {id, "<table><tr><td>" + id + "</td></tr></table>", "Title " + id,
          std::move(triples), false};
}

/// Model that numbers its scripts in generation order.
struct ScriptedModel {
  std::shared_ptr<TranscriptClient> transcript;
  std::shared_ptr<Gateway> gateway;
  std::vector<std::string> sources;

  ScriptedModel() {
    auto counter = std::make_shared<int>(0);
    auto inner = std::make_shared<CallbackClient>([counter](const ChatRequest&) {
      return "```python\ndef parse(html):  # script_" + std::to_string((*counter)++) +
             "\n    return []\n```";
    });
    transcript = std::make_shared<TranscriptClient>(inner);
    gateway = std::make_shared<Gateway>(transcript);
  }

  static std::string source(int k) {
    return "def parse(html):  # script_" + std::to_string(k) + "\n    return []";
  }
};

/// Defines script k to return the first `a` triples on exemplar A and the
/// first `b` on exemplar B (negative: raise).
void define_scores(StubSandbox& sb, int k, const ExemplarSample& A, const ExemplarSample& B,
                   int a, int b) {
  sb.define(ScriptedModel::source(k), [=](const SandboxRequest& req) {
    const bool is_a = req.html.find(A.title) != std::string::npos;
    const int n = is_a ? a : b;
    if (n < 0) return StubSandbox::error("ValueError: boom");
    const TripleList& gold = is_a ? A.triples : B.triples;
    return StubSandbox::ok(TripleList(gold.begin(), gold.begin() + n));
  });
}

}  // namespace

TEST(StripCodeFences, Variants) {
  EXPECT_EQ(strip_code_fences("```python\ndef parse(html):\n    return []\n```"),
            "def parse(html):\n    return []");
  EXPECT_EQ(strip_code_fences("```\ndef parse(h): pass\n```\ntrailing words"),
            "def parse(h): pass");
  EXPECT_EQ(strip_code_fences("  def parse(h): pass \n"), "def parse(h): pass");
}

TEST(GenerateScript, TwoSamplePromptHasBothBlocks) {
  ScriptedModel model;
  const ExemplarSample s[] = {sample("A", numbered("a", 2)), sample("B", numbered("b", 2))};
  const auto c = generate_script(s, std::nullopt, *model.gateway, {});
  EXPECT_EQ(c.origin.kind, ScriptOrigin::Kind::TwoSample);
  EXPECT_EQ(c.source.rfind("def parse", 0), 0u);
  const auto entries = model.transcript->entries();
  ASSERT_EQ(entries.size(), 1u);
  const std::string& user = entries[0].request.user;
  EXPECT_NE(user.find("Below are two samples"), std::string::npos);
  EXPECT_NE(user.find("# Sample 1"), std::string::npos);
  EXPECT_NE(user.find("# Sample 2"), std::string::npos);
  EXPECT_NE(user.find("<title>Title A</title>"), std::string::npos);
  EXPECT_NE(user.find("(b1, value, v1)"), std::string::npos);
}

TEST(GenerateScript, FeedbackPromptEmbedsPreviousScript) {
  ScriptedModel model;
  const ExemplarSample s = sample("A", numbered("a", 2));
  ExecResult result;
  result.outcome = std::string("ValueError: boom");
  const std::string previous = "def parse(html):\n    raise ValueError('boom')";
  const auto c = generate_script(std::span(&s, 1), ScriptFeedback{previous, result, 2},
                                 *model.gateway, {});
  EXPECT_EQ(c.origin.kind, ScriptOrigin::Kind::Feedback);
  EXPECT_EQ(c.origin.iteration, 2);
  const std::string& user = model.transcript->entries()[0].request.user;
  EXPECT_NE(user.find("# Function\n" + previous + "\n# Execution result\nValueError: boom"),
            std::string::npos);
}

TEST(GenerateScript, EmptyReplyRaises) {
  Gateway gw(std::make_shared<CallbackClient>([](const ChatRequest&) { return "```\n```"; }));
  const ExemplarSample s = sample("A", numbered("a", 1));
  EXPECT_THROW(generate_script(std::span(&s, 1), std::nullopt, gw, {}), EmptyScript);
}

TEST(Forge, CandidateCounts) {
  const auto A = sample("A", numbered("a", 10)), B = sample("B", numbered("b", 10));
  for (int k : {3, 1, 0}) {
    ScriptedModel model;
    StubSandbox sb;
    for (int i = 0; i < 20; ++i) define_scores(sb, i, A, B, 5, 5);
    ForgeOptions opt;
    opt.iterations = k;
    const auto r = forge(A, B, *model.gateway, sb, opt);
    EXPECT_EQ(r.log.size(), forge_candidate_count(k));
    EXPECT_EQ(model.transcript->entries().size(), forge_candidate_count(k));
  }
  EXPECT_EQ(forge_candidate_count(3), 9u);
  EXPECT_EQ(forge_candidate_count(1), 5u);
}

TEST(Forge, OriginsFollowTheLoop) {
  const auto A = sample("A", numbered("a", 10)), B = sample("B", numbered("b", 10));
  ScriptedModel model;
  StubSandbox sb;
  for (int i = 0; i < 9; ++i) define_scores(sb, i, A, B, 1, 1);
  const auto r = forge(A, B, *model.gateway, sb, {});
  ASSERT_EQ(r.log.size(), 9u);
  EXPECT_EQ(r.log[0].origin.kind, ScriptOrigin::Kind::TwoSample);
  EXPECT_EQ(r.log[1].origin, (ScriptOrigin{ScriptOrigin::Kind::OneSample, "A", 0}));
  EXPECT_EQ(r.log[4].origin, (ScriptOrigin{ScriptOrigin::Kind::Feedback, "A", 3}));
  EXPECT_EQ(r.log[5].origin, (ScriptOrigin{ScriptOrigin::Kind::OneSample, "B", 0}));
  EXPECT_EQ(r.log[8].origin, (ScriptOrigin{ScriptOrigin::Kind::Feedback, "B", 3}));

  const auto entries = model.transcript->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const bool feedback = i != 0 && i != 1 && i != 5;
    const std::string& user = entries[i].request.user;
    EXPECT_EQ(user.find("# Function\n") != std::string::npos, feedback) << i;
    if (feedback) {
      EXPECT_NE(user.find("# Function\n" + r.log[i - 1].source + "\n# Execution result\n"),
                std::string::npos)
          << i;
    }
  }
}

TEST(Forge, PerfectFirstScriptStillRunsFullLoop) {
  const auto A = sample("A", numbered("a", 10)), B = sample("B", numbered("b", 10));
  ScriptedModel model;
  StubSandbox sb;
  define_scores(sb, 0, A, B, 10, 10);
  for (int i = 1; i < 9; ++i) define_scores(sb, i, A, B, 2, 2);
  const auto r = forge(A, B, *model.gateway, sb, {});
  EXPECT_EQ(r.log.size(), 9u);
  EXPECT_EQ(r.best.source, ScriptedModel::source(0));
  EXPECT_DOUBLE_EQ(*r.best.exemplar_score, 1.0);
}

TEST(Forge, AllCandidatesFailing) {
  const auto A = sample("A", numbered("a", 3)), B = sample("B", numbered("b", 3));
  ScriptedModel model;
  StubSandbox sb;
  EXPECT_THROW(forge(A, B, *model.gateway, sb, {}), ForgeFailed);
}

TEST(SelectBestScript, Argmax) {
  const auto A = sample("A", numbered("a", 10)), B = sample("B", numbered("b", 10));
  StubSandbox sb;
  define_scores(sb, 0, A, B, 3, 3);
  define_scores(sb, 1, A, B, 8, 8);
  define_scores(sb, 2, A, B, 6, 6);
  std::vector<ScriptCandidate> c;
  for (int i = 0; i < 3; ++i) c.push_back({ScriptedModel::source(i), {}, std::nullopt});
  const auto best = select_best_script(c, A, B, sb);
  EXPECT_EQ(best.source, ScriptedModel::source(1));
  EXPECT_DOUBLE_EQ(*best.exemplar_score, 0.8);
}

TEST(SelectBestScript, TieGoesToFirst) {
  const auto A = sample("A", numbered("a", 10)), B = sample("B", numbered("b", 10));
  StubSandbox sb;
  define_scores(sb, 0, A, B, 10, 0);
  define_scores(sb, 1, A, B, 5, 5);
  define_scores(sb, 2, A, B, -1, -1);
  std::vector<ScriptCandidate> c;
  for (int i : {2, 0, 1}) c.push_back({ScriptedModel::source(i), {}, std::nullopt});
  ForgeOptions opt;
  opt.workers = 3;
  const auto ev = evaluate_candidates(c, A, B, sb, opt);
  EXPECT_EQ(ev.scores, (std::vector<double>{0.0, 0.5, 0.5}));
  EXPECT_EQ(ev.best, 1u);
}

TEST(ExtractWithScript, FormsTablePageYieldsGold) {
  StubSandbox sb;
  const std::string src = "def parse(html): ...";
  sb.define(src, [](const SandboxRequest& req) {
    return StubSandbox::ok(forms::reference_extract(req.html));
  });
  const auto triples = extract_with_script({src, {}, std::nullopt}, forms::page(), sb);
  EXPECT_EQ(triples, forms::gold());
}

TEST(ExtractWithScript, FailureKinds) {
  StubSandbox sb;
  sb.define("loop", [](const SandboxRequest&) { return StubSandbox::timeout(); });
  sb.define("rows", [](const SandboxRequest&) {
    return nlohmann::json{{"status", "ok"},
                          {"triples", {{"a", "b", "c"}, {"a", "b"}}}};
  });
  sb.define("raise", [](const SandboxRequest&) { return StubSandbox::error("ValueError: x"); });
  const PageDocument page = forms::page();
  auto kind_of = [&](const std::string& src) {
    try {
      extract_with_script({src, {}, std::nullopt}, page, sb);
    } catch (const SandboxError& e) {
      return std::make_pair(e.kind(), std::string(e.what()));
    }
    return std::make_pair(SandboxErrorKind::Crash, std::string("no error"));
  };
  EXPECT_EQ(kind_of("loop").first, SandboxErrorKind::Timeout);
  const auto rows = kind_of("rows");
  EXPECT_EQ(rows.first, SandboxErrorKind::BadOutput);
  EXPECT_NE(rows.second.find("row 1"), std::string::npos);
  const auto raised = kind_of("raise");
  EXPECT_EQ(raised.first, SandboxErrorKind::Crash);
  EXPECT_NE(raised.second.find("ValueError: x"), std::string::npos);
}

TEST(ScriptArtifact, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "wt_scripts_test";
  std::filesystem::remove_all(dir);
  ScriptCandidate c{"def parse(html): return []", {ScriptOrigin::Kind::Feedback, "p7", 2}, 0.75};
  save_script_artifact(dir, "uscourts.gov", c);
  const auto loaded = load_script_artifact(dir, "uscourts.gov");
  ASSERT_TRUE(loaded);
  EXPECT_EQ(loaded->source, c.source);
  EXPECT_EQ(loaded->origin, c.origin);
  EXPECT_EQ(loaded->exemplar_score, 0.75);
  EXPECT_FALSE(load_script_artifact(dir, "other.site"));
  std::filesystem::remove_all(dir);
}
