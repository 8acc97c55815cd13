// Command-line front end for extraction, script forging, evaluation and QA
// experiments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "webtriples/bench.hpp"
#include "webtriples/http_client.hpp"
#include "webtriples/judges.hpp"

namespace wt = webtriples;
namespace bench = webtriples::bench;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kUnavailable = 3 };

/// Sends each request to the live endpoint configured for its model.
class RoutingClient : public wt::ChatClient {
 public:
  void add(const wt::ModelConfig& cfg) {
    std::lock_guard lock(mu_);
    configs_.emplace(cfg.model, cfg);
  }

  wt::ChatResponse send(const wt::ChatRequest& request) override {
    std::shared_ptr<wt::ChatClient> client;
    {
      std::lock_guard lock(mu_);
      auto it = clients_.find(request.model);
      if (it == clients_.end()) {
        auto cfg = configs_.find(request.model);
        if (cfg == configs_.end()) {
          throw wt::DataError("no endpoint configured for model " + request.model);
        }
        if (cfg->second.endpoint.empty()) {
          throw wt::DataError("model " + request.model + " has no endpoint");
        }
        it = clients_
                 .emplace(request.model,
                          std::make_shared<wt::HttpChatClient>(cfg->second))
                 .first;
      }
      client = it->second;
    }
    return client->send(request);
  }

 private:
  std::mutex mu_;
  std::map<std::string, wt::ModelConfig> configs_;
  std::map<std::string, std::shared_ptr<wt::ChatClient>> clients_;
};

struct GlobalOptions {
  std::string config;
  std::string replay;
  std::string record;
  std::vector<std::string> overrides;
  int workers = 0;
  long long seed = -1;
};

class Session {
 public:
  Session(const GlobalOptions& g, const std::vector<std::pair<std::string, std::string>>& extra)
      : globals_(g) {
    nlohmann::json cfg = g.config.empty() ? nlohmann::json::object()
                                          : bench::read_json_file(g.config);
    for (const auto& o : g.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw wt::DataError("--set expects key=value: " + o);
      bench::apply_override(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    for (const auto& [k, v] : extra) {
      if (!v.empty()) bench::apply_override(cfg, k, v);
    }
    if (g.workers > 0) cfg["workers"] = g.workers;
    if (g.seed >= 0) cfg["seed"] = g.seed;
    spec = bench::spec_from_json(cfg);
  }

  std::shared_ptr<const wt::Gateway> gateway(const wt::ModelConfig& cfg) {
    wt::ContextGuard guard{cfg.context_tokens, wt::Tokenizer(spec.tokenizer)};
    return std::make_shared<const wt::Gateway>(client(cfg), std::move(guard),
                                               wt::RetryPolicy{}, cfg.rate_limit);
  }

  std::unique_ptr<wt::Sandbox> sandbox() const {
    if (spec.sandbox.command.empty()) {
      throw wt::DataError("config: sandbox.command is required");
    }
    return std::make_unique<wt::ProcessSandbox>(spec.sandbox.command);
  }

  bench::ExperimentSpec spec;

 private:
  std::shared_ptr<wt::ChatClient> client(const wt::ModelConfig& cfg) {
    if (!globals_.replay.empty()) {
      if (!replay_) replay_ = std::make_shared<wt::ReplayClient>(globals_.replay);
      return replay_;
    }
    if (!routing_) routing_ = std::make_shared<RoutingClient>();
    routing_->add(cfg);
    if (globals_.record.empty()) return routing_;
    if (!recording_) recording_ = wt::record_session(routing_, globals_.record);
    return recording_;
  }

  GlobalOptions globals_;
  std::shared_ptr<wt::ReplayClient> replay_;
  std::shared_ptr<RoutingClient> routing_;
  std::shared_ptr<wt::RecordingClient> recording_;
};

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    bench::write_text_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triple extraction and QA benchmark harness"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--replay", g.replay, "Serve model calls from a recorded store");
  app.add_option("--record", g.record, "Record live model calls into a store");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Seed for exemplar sampling")->check(CLI::NonNegativeNumber);
  app.add_option("--set", g.overrides, "Override a config key (key=value)");

  std::string pages, gold, out, extractor, split, scripts_dir;
  auto* extract = app.add_subcommand("extract", "Extract triples from every page");
  extract->add_option("--pages", pages, "Page corpus (JSONL)");
  extract->add_option("--extractor", extractor, "zero_shot | few_shot | script");
  extract->add_option("--split", split, "in_domain | out_of_domain");
  extract->add_option("--scripts-dir", scripts_dir, "Forged script directory");
  extract->add_option("--out", out, "Output directory");

  auto* forge_cmd = app.add_subcommand("forge-script", "Forge one extraction script per site");
  forge_cmd->add_option("--pages", pages, "Page corpus (JSONL)");
  forge_cmd->add_option("--scripts-dir", scripts_dir, "Output script directory");
  forge_cmd->add_option("--out", out, "Forge manifest path (default stdout)");

  std::string predictions, manifest;
  bool no_judge = false;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against gold");
  evaluate->add_option("--predictions", predictions, "Predicted triples (JSONL)")->required();
  evaluate->add_option("--gold", gold, "Gold triples (JSONL)");
  evaluate->add_option("--manifest", manifest, "Extraction manifest");
  evaluate->add_option("--pages", pages, "Page corpus for layout tags");
  evaluate->add_flag("--no-judge", no_judge, "Skip the LM metrics");
  evaluate->add_option("--out", out, "Evaluation output (default stdout)");

  std::string augmentation;
  auto* qa = app.add_subcommand("qa-eval", "Answer and score QA pairs");
  qa->add_option("--pages", pages, "Page corpus (JSONL)");
  qa->add_option("--augment-with", augmentation, "Triples appended to references");
  qa->add_flag("--no-judge", no_judge, "Skip Accuracy_LM");
  qa->add_option("--out", out, "QA output (default stdout)");

  auto* augment = app.add_subcommand("augment", "Write augmented QA references");
  augment->add_option("--pages", pages, "Page corpus (JSONL)");
  augment->add_option("--augment-with", augmentation, "Triples to append");
  augment->add_option("--out", out, "Output JSONL (default stdout)");

  std::string input, format = "table";
  auto* report = app.add_subcommand("report", "Render an evaluation or QA result");
  report->add_option("input", input, "Result document")->required();
  report->add_option("--format", format, "json | table | csv")
      ->check(CLI::IsMember({"json", "table", "csv"}));
  report->add_option("--out", out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (report->parsed()) {
      emit(out, bench::render_report(bench::read_json_file(input),
                                     bench::parse_report_format(format)));
      return kOk;
    }

    Session session(g, {{"pages", pages},
                        {"extractor.kind", extractor},
                        {"split", split},
                        {"extractor.scripts_dir", scripts_dir},
                        {"gold", gold},
                        {"augmentation", augmentation}});
    auto& spec = session.spec;

    if (extract->parsed()) {
      bench::ExtractionContext ctx;
      std::shared_ptr<const wt::Gateway> gw;
      std::unique_ptr<wt::Sandbox> sb;
      if (spec.extractor == bench::ExtractorKind::Script) {
        sb = session.sandbox();
        ctx.sandbox = sb.get();
      } else {
        gw = session.gateway(spec.model);
        ctx.gateway = gw.get();
      }
      auto run = bench::run_extraction(spec, ctx);
      const std::string dir = out.empty() ? spec.output_dir : out;
      bench::write_extraction(run, dir);
      const auto& c = run.manifest.at("counts");
      std::fprintf(stderr, "extract: %zu ok, %zu overflow, %zu error -> %s\n",
                   c.at("ok").get<std::size_t>(), c.at("overflow").get<std::size_t>(),
                   c.at("error").get<std::size_t>(), dir.c_str());
    } else if (forge_cmd->parsed()) {
      auto gw = session.gateway(spec.model);
      auto sb = session.sandbox();
      const auto results = bench::forge_sites(spec, *gw, *sb);
      emit(out, bench::to_json(results).dump(2) + "\n");
    } else if (evaluate->parsed()) {
      if (spec.gold.empty()) throw wt::DataError("evaluate needs --gold or config gold");
      const auto pred = wt::read_triples(predictions);
      const auto gold_corpus = wt::read_triples(spec.gold);
      std::vector<bench::PageInfo> universe;
      if (!manifest.empty()) {
        universe = bench::pages_from_manifest(bench::read_json_file(manifest));
      } else if (!spec.pages.empty()) {
        universe = bench::pages_from_corpus(bench::load_eval_pages(
            spec, wt::Tokenizer(spec.tokenizer)));
      } else {
        universe = bench::pages_from_gold(gold_corpus);
      }
      std::optional<wt::TripleJudge> judge;
      if (spec.judge && !no_judge) {
        judge = wt::make_triple_judge(session.gateway(*spec.judge), spec.judge->model);
      }
      const auto result = bench::evaluate_run(universe, pred, gold_corpus,
                                              judge ? &*judge : nullptr,
                                              spec.averaging, spec.workers);
      emit(out, bench::to_json(result).dump(2) + "\n");
    } else if (qa->parsed()) {
      auto gw = session.gateway(spec.model);
      std::optional<wt::QaJudge> judge;
      if (spec.judge && !no_judge) {
        judge = wt::make_qa_judge(session.gateway(*spec.judge), spec.judge->model);
      }
      const auto run = bench::run_augmented_qa(spec, {gw.get(), judge ? &*judge : nullptr});
      emit(out, bench::to_json(run, spec).dump(2) + "\n");
    } else if (augment->parsed()) {
      emit(out, bench::augmented_references_jsonl(spec));
    }
    return kOk;
  } catch (const wt::JudgeUnavailable& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnavailable;
  } catch (const wt::TransportFailed& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnavailable;
  } catch (const wt::ReplayMiss& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnavailable;
  } catch (const wt::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
}
