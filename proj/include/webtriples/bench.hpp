#pragma once

// Experiment orchestration: configuration, extraction runs, augmented QA,
// evaluation and report rendering.
//
// Page-level work runs on a bounded worker pool. Results are written into
// per-page slots and folded in page_id order, so outputs do not depend on
// completion order or worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/judges.hpp"
#include "webtriples/llm_gateway.hpp"
#include "webtriples/match_metrics.hpp"
#include "webtriples/page_model.hpp"
#include "webtriples/prompts.hpp"
#include "webtriples/qa_metrics.hpp"
#include "webtriples/sandbox.hpp"
#include "webtriples/script_forge.hpp"
#include "webtriples/triple_core.hpp"

namespace webtriples::bench {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Runs f(i) for i in [0, n) on up to `workers` threads. If any call
/// throws, the exception from the lowest index is rethrown after all
/// threads finish.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class Split { InDomain, OutOfDomain };
enum class ExtractorKind { ZeroShot, FewShot, Script };
enum class QaReference { Flattened, Html, None };

struct SandboxConfig {
  std::string command;
  double timeout_seconds = 30.0;
  std::size_t max_triples = 10000;
};

struct ExperimentSpec {
  std::string pages, gold, qa;
  std::string exemplar_pages, exemplar_gold, qa_exemplars;
  Split split = Split::InDomain;
  std::vector<std::string> sites;  // evaluation sites; empty means all
  ExtractorKind extractor = ExtractorKind::ZeroShot;
  std::size_t shots = 0;           // 0 selects the split's default
  std::string scripts_dir;
  bool pseudo_labels = false;
  CleanerSpec cleaner;
  TokenizerSpec tokenizer;
  ModelConfig model;
  std::optional<ModelConfig> judge;
  std::string augmentation;        // triples file appended to QA references
  QaReference qa_reference = QaReference::Flattened;
  std::size_t qa_shots = 0;
  SandboxConfig sandbox;
  int forge_iterations = 3;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  Averaging averaging = Averaging::Macro;

  json effective;  // merged configuration the fields were read from

  std::size_t effective_shots() const {
    if (shots) return shots;
    return split == Split::InDomain ? 2 : 3;
  }
  std::string hash() const { return sha256_hex(effective.dump()); }
};

inline json default_config() {
  return {{"pages", ""},
          {"gold", ""},
          {"qa", ""},
          {"exemplar_pages", ""},
          {"exemplar_gold", ""},
          {"qa_exemplars", ""},
          {"split", "in_domain"},
          {"sites", json::array()},
          {"extractor", {{"kind", "zero_shot"}, {"shots", 0},
                         {"scripts_dir", ""}, {"pseudo_labels", false}}},
          {"cleaner", nullptr},
          {"tokenizer", {{"kind", "whitespace"}}},
          {"model", {{"endpoint", ""}, {"model", ""}}},
          {"judge", nullptr},
          {"augmentation", nullptr},
          {"qa_reference", "flattened"},
          {"qa_shots", 0},
          {"sandbox", {{"command", ""}, {"timeout_seconds", 30.0},
                       {"max_triples", 10000}}},
          {"forge", {{"iterations", 3}}},
          {"output_dir", "out"},
          {"seed", 0},
          {"workers", 4},
          {"aggregation", "macro"}};
}

/// Sets a dotted key ("extractor.kind") from command-line text. The value is
/// parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(json& config, const std::string& key,
                           const std::string& value) {
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw DataError("bad override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = std::move(parsed);
      return;
    }
    json& child = (*node)[part];
    if (!child.is_object()) child = json::object();
    node = &child;
    start = dot + 1;
  }
}

namespace detail {

template <typename T>
T get_or_throw(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("config key \"") + key + "\": " + e.what());
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "in_domain") return Split::InDomain;
  if (s == "out_of_domain") return Split::OutOfDomain;
  throw DataError("split must be in_domain or out_of_domain, got " + s);
}

inline ExtractorKind parse_extractor(const std::string& s) {
  if (s == "zero_shot") return ExtractorKind::ZeroShot;
  if (s == "few_shot") return ExtractorKind::FewShot;
  if (s == "script") return ExtractorKind::Script;
  throw DataError("extractor.kind must be zero_shot, few_shot or script, got " + s);
}

inline QaReference parse_qa_reference(const std::string& s) {
  if (s == "flattened") return QaReference::Flattened;
  if (s == "html") return QaReference::Html;
  if (s == "none") return QaReference::None;
  throw DataError("qa_reference must be flattened, html or none, got " + s);
}

}  // namespace detail

inline std::string_view to_string(Split s) {
  return s == Split::InDomain ? "in_domain" : "out_of_domain";
}

inline std::string_view to_string(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::ZeroShot: return "zero_shot";
    case ExtractorKind::FewShot: return "few_shot";
    case ExtractorKind::Script: return "script";
  }
  return "zero_shot";
}

inline std::string_view to_string(QaReference r) {
  switch (r) {
    case QaReference::Flattened: return "flattened";
    case QaReference::Html: return "html";
    case QaReference::None: return "none";
  }
  return "flattened";
}

/// Builds a spec from a user config merged over the defaults. Unknown
/// top-level keys are rejected.
inline ExperimentSpec spec_from_json(const json& user) {
  if (!user.is_object()) throw DataError("config must be a JSON object");
  json cfg = default_config();
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!cfg.contains(it.key())) {
      throw DataError("unknown config key: " + it.key());
    }
  }
  cfg.merge_patch(user);
  using detail::get_or_throw;

  ExperimentSpec s;
  s.effective = cfg;
  s.pages = get_or_throw<std::string>(cfg, "pages");
  s.gold = get_or_throw<std::string>(cfg, "gold");
  s.qa = get_or_throw<std::string>(cfg, "qa");
  s.exemplar_pages = get_or_throw<std::string>(cfg, "exemplar_pages");
  s.exemplar_gold = get_or_throw<std::string>(cfg, "exemplar_gold");
  s.qa_exemplars = get_or_throw<std::string>(cfg, "qa_exemplars");
  s.split = detail::parse_split(get_or_throw<std::string>(cfg, "split"));
  s.sites = get_or_throw<std::vector<std::string>>(cfg, "sites");

  const json& ex = cfg.at("extractor");
  if (!ex.is_object()) throw DataError("extractor must be an object");
  s.extractor = detail::parse_extractor(ex.value("kind", "zero_shot"));
  s.shots = ex.value("shots", std::size_t{0});
  s.scripts_dir = ex.value("scripts_dir", "");
  s.pseudo_labels = ex.value("pseudo_labels", false);
  if (s.extractor == ExtractorKind::FewShot) {
    const std::size_t k = s.effective_shots();
    if (s.split == Split::InDomain && k != 2) {
      throw DataError("in-domain few-shot uses 2 same-site exemplars");
    }
    if (s.split == Split::OutOfDomain && k != 3) {
      throw DataError("out-of-domain few-shot uses 3 exemplars, one per layout");
    }
  }

  if (const json& c = cfg.at("cleaner"); !c.is_null()) {
    s.cleaner = CleanerSpec::external(get_or_throw<std::string>(c, "command"));
    s.cleaner.timeout_seconds = c.value("timeout_seconds", 120.0);
  }
  if (const json& t = cfg.at("tokenizer"); t.is_object()) {
    const std::string kind = t.value("kind", "whitespace");
    if (kind == "vocabulary") {
      s.tokenizer = TokenizerSpec::vocabulary(
          get_or_throw<std::string>(t, "vocabulary_file"));
    } else if (kind != "whitespace") {
      throw DataError("tokenizer.kind must be whitespace or vocabulary");
    }
  }
  s.model = model_config_from_json(cfg.at("model"));
  if (const json& j = cfg.at("judge"); !j.is_null()) {
    s.judge = model_config_from_json(j);
  }
  if (const json& a = cfg.at("augmentation"); !a.is_null()) {
    s.augmentation = a.is_string() ? a.get<std::string>()
                                   : get_or_throw<std::string>(a, "source");
  }
  s.qa_reference =
      detail::parse_qa_reference(get_or_throw<std::string>(cfg, "qa_reference"));
  s.qa_shots = get_or_throw<std::size_t>(cfg, "qa_shots");
  if (s.qa_shots != 0 && s.qa_shots != 2) {
    throw DataError("qa_shots must be 0 or 2");
  }
  if (s.qa_reference == QaReference::None &&
      (s.qa_shots || !s.augmentation.empty())) {
    throw DataError("qa_reference none excludes few-shot QA and augmentation");
  }

  const json& sb = cfg.at("sandbox");
  s.sandbox.command = sb.value("command", "");
  s.sandbox.timeout_seconds = sb.value("timeout_seconds", 30.0);
  s.sandbox.max_triples = sb.value("max_triples", std::size_t{10000});
  if (!(s.sandbox.timeout_seconds > 0) ||
      s.sandbox.timeout_seconds > kSandboxTimeoutCeiling) {
    throw DataError("sandbox.timeout_seconds must be in (0, 60]");
  }
  s.forge_iterations = cfg.at("forge").value("iterations", 3);
  if (s.forge_iterations < 0) throw DataError("forge.iterations must be >= 0");
  s.output_dir = get_or_throw<std::string>(cfg, "output_dir");
  s.seed = get_or_throw<std::uint64_t>(cfg, "seed");
  s.workers = std::max<std::size_t>(1, get_or_throw<std::size_t>(cfg, "workers"));
  const std::string agg = get_or_throw<std::string>(cfg, "aggregation");
  if (agg == "macro") {
    s.averaging = Averaging::Macro;
  } else if (agg == "micro") {
    s.averaging = Averaging::Micro;
  } else {
    throw DataError("aggregation must be macro or micro");
  }
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Seeded selection
// ---------------------------------------------------------------------------

/// Seed for one selection decision, stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  const std::string digest =
      sha256_hex(std::to_string(seed) + ":" + std::string(key));
  return std::stoull(digest.substr(0, 16), nullptr, 16);
}

/// First `k` elements of a seeded Fisher-Yates permutation of `items`.
template <typename T>
std::vector<T> seeded_sample(std::vector<T> items, std::size_t k,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng() % i]);
  }
  items.resize(std::min(k, items.size()));
  return items;
}

// ---------------------------------------------------------------------------
// Corpora
// ---------------------------------------------------------------------------

struct Corpus {
  std::vector<PageDocument> pages;  // sorted by page_id
  std::unordered_map<std::string, std::size_t> index;

  const PageDocument* find(const std::string& page_id) const {
    auto it = index.find(page_id);
    return it == index.end() ? nullptr : &pages[it->second];
  }
};

inline Corpus make_corpus(std::vector<PageDocument> pages) {
  Corpus c;
  c.pages = std::move(pages);
  std::sort(c.pages.begin(), c.pages.end(),
            [](const auto& a, const auto& b) { return a.page_id < b.page_id; });
  for (std::size_t i = 0; i < c.pages.size(); ++i) {
    c.index.emplace(c.pages[i].page_id, i);
  }
  return c;
}

/// Evaluation pages, restricted to the configured sites when given.
inline Corpus load_eval_pages(const ExperimentSpec& spec,
                              const Tokenizer& tokenizer) {
  if (spec.pages.empty()) throw DataError("config: pages is required");
  auto pages = read_pages(spec.pages, tokenizer);
  if (!spec.sites.empty()) {
    const std::set<std::string> keep(spec.sites.begin(), spec.sites.end());
    std::erase_if(pages, [&](const auto& p) { return !keep.count(p.site); });
  }
  return make_corpus(std::move(pages));
}

inline std::set<std::string> sites_of(const Corpus& c) {
  std::set<std::string> out;
  for (const auto& p : c.pages) out.insert(p.site);
  return out;
}

// ---------------------------------------------------------------------------
// Few-shot exemplar policies
// ---------------------------------------------------------------------------

struct Exemplar {
  const PageDocument* page;
  const TripleList* triples;
};

/// Exemplar pages with their gold triples.
struct ExemplarPool {
  Corpus pages;
  TripleCorpus gold;

  std::vector<const PageDocument*> labelled() const {
    std::vector<const PageDocument*> out;
    for (const auto& p : pages.pages) {
      if (!gold.get(p.page_id).empty()) out.push_back(&p);
    }
    return out;
  }
};

/// Two exemplars from the target page's own site, never the page itself.
inline std::vector<Exemplar> select_same_site(const ExemplarPool& pool,
                                              const PageDocument& page,
                                              std::size_t k,
                                              std::uint64_t seed) {
  std::vector<const PageDocument*> candidates;
  for (const PageDocument* p : pool.labelled()) {
    if (p->site == page.site && p->page_id != page.page_id) {
      candidates.push_back(p);
    }
  }
  if (candidates.size() < k) {
    throw DataError("site " + page.site + " has " +
                    std::to_string(candidates.size()) +
                    " labelled exemplar pages, need " + std::to_string(k));
  }
  std::vector<Exemplar> out;
  for (const PageDocument* p :
       seeded_sample(candidates, k, derive_seed(seed, "site:" + page.site))) {
    out.push_back({p, &pool.gold.get(p->page_id)});
  }
  return out;
}

/// One exemplar per layout (A-V, Hz, F-F) drawn from sites outside the
/// evaluation set. The same three exemplars serve every page.
inline std::vector<Exemplar> select_one_per_layout(
    const ExemplarPool& pool, const std::set<std::string>& eval_sites,
    std::uint64_t seed) {
  std::vector<Exemplar> out;
  for (Layout layout : {Layout::AttributeValue, Layout::HorizontalTable,
                        Layout::FreeForm}) {
    std::vector<const PageDocument*> candidates;
    for (const PageDocument* p : pool.labelled()) {
      if (p->layout == layout && !eval_sites.count(p->site)) {
        candidates.push_back(p);
      }
    }
    if (candidates.empty()) {
      throw DataError("no out-of-domain exemplar with layout " +
                      std::string(layout_tag(layout)));
    }
    const auto pick = seeded_sample(
        candidates, 1,
        derive_seed(seed, "layout:" + std::string(layout_tag(layout))));
    out.push_back({pick.front(), &pool.gold.get(pick.front()->page_id)});
  }
  return out;
}

inline RenderedPrompt render_few_shot_extraction(
    const PageDocument& page, const std::vector<Exemplar>& exemplars) {
  PromptTemplate tpl{PromptId::TE_FewShot,
                     few_shot_extraction_system(exemplars.size()),
                     std::string(prompt_text::kExtractionUser)};
  PromptVars vars{{"title", page.title}, {"html", page.html}};
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    vars["title_" + n] = exemplars[i].page->title;
    vars["html_" + n] = exemplars[i].page->html;
    vars["triples_" + n] = to_paren_lines(*exemplars[i].triples);
  }
  return tpl.render(vars);
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

enum class PageStatus { Ok, Overflow, Error };

inline std::string_view to_string(PageStatus s) {
  switch (s) {
    case PageStatus::Ok: return "ok";
    case PageStatus::Overflow: return "overflow";
    case PageStatus::Error: return "error";
  }
  return "error";
}

inline PageStatus parse_page_status(const std::string& s) {
  if (s == "ok") return PageStatus::Ok;
  if (s == "overflow") return PageStatus::Overflow;
  if (s == "error") return PageStatus::Error;
  throw DataError("unknown page status: " + s);
}

struct PageRecord {
  std::string page_id;
  std::string site;
  Layout layout = Layout::Unknown;
  PageStatus status = PageStatus::Ok;
  std::string error;
  std::size_t rejected_lines = 0;
  bool cleaning_failed = false;
  double wall_time_seconds = 0.0;
};

struct ExtractionRun {
  TripleCorpus predictions;        // page_id order
  std::vector<PageRecord> pages;   // page_id order, one per corpus page
  json split_check;
  json manifest;
};

struct ExtractionContext {
  const Gateway* gateway = nullptr;  // LLM extractors
  Sandbox* sandbox = nullptr;        // script extractor
};

inline ExtractionRun run_extraction(const ExperimentSpec& spec,
                                    const ExtractionContext& ctx) {
  const auto run_start = std::chrono::steady_clock::now();
  const Tokenizer tokenizer(spec.tokenizer);
  const Corpus corpus = load_eval_pages(spec, tokenizer);
  const std::set<std::string> eval_sites = sites_of(corpus);

  ExtractionRun run;
  run.split_check = {{"split", to_string(spec.split)}};

  std::optional<ExemplarPool> pool;
  std::vector<Exemplar> layout_exemplars;
  if (spec.extractor == ExtractorKind::FewShot) {
    if (spec.exemplar_pages.empty() || spec.exemplar_gold.empty()) {
      throw DataError("few-shot extraction needs exemplar_pages and exemplar_gold");
    }
    pool = ExemplarPool{make_corpus(read_pages(spec.exemplar_pages, tokenizer)),
                        read_triples(spec.exemplar_gold)};
    if (spec.split == Split::InDomain) {
      std::vector<std::string> overlap;
      for (const auto& p : pool->pages.pages) {
        if (corpus.find(p.page_id)) overlap.push_back(p.page_id);
      }
      run.split_check["policy"] = "same_site";
      run.split_check["disjoint"] = "pages";
      if (!overlap.empty()) {
        throw DataError("in-domain split: exemplar pool shares page " +
                        overlap.front() + " with the evaluation set");
      }
    } else {
      run.split_check["policy"] = "one_per_layout";
      run.split_check["disjoint"] = "sites";
      for (const auto& p : pool->pages.pages) {
        if (eval_sites.count(p.site)) {
          throw DataError("out-of-domain split: exemplar site " + p.site +
                          " is also an evaluation site");
        }
      }
      layout_exemplars = select_one_per_layout(*pool, eval_sites, spec.seed);
      json ids = json::array();
      for (const auto& e : layout_exemplars) ids.push_back(e.page->page_id);
      run.split_check["exemplar_pages"] = ids;
    }
  }
  if (spec.extractor != ExtractorKind::Script && !ctx.gateway) {
    throw Error("LLM extraction requires a gateway");
  }
  if (spec.extractor == ExtractorKind::Script) {
    if (!ctx.sandbox) throw DataError("script extraction requires a sandbox");
    if (spec.scripts_dir.empty()) {
      throw DataError("script extraction requires extractor.scripts_dir");
    }
  }

  std::mutex script_mu;
  std::map<std::string, std::optional<ScriptCandidate>> scripts;
  auto script_for = [&](const std::string& site) {
    std::lock_guard lock(script_mu);
    auto it = scripts.find(site);
    if (it == scripts.end()) {
      it = scripts.emplace(site, load_script_artifact(spec.scripts_dir, site)).first;
    }
    return it->second;
  };

  ForgeOptions exec_options;
  exec_options.exec_timeout_seconds = spec.sandbox.timeout_seconds;
  exec_options.max_triples = spec.sandbox.max_triples;

  std::vector<PageRecord> records(corpus.pages.size());
  std::vector<TripleList> outputs(corpus.pages.size());
  parallel_for(corpus.pages.size(), spec.workers, [&](std::size_t i) {
    const PageDocument& original = corpus.pages[i];
    PageRecord& rec = records[i];
    rec.page_id = original.page_id;
    rec.site = original.site;
    rec.layout = original.layout;
    const auto start = std::chrono::steady_clock::now();

    PageDocument page = original;
    if (spec.cleaner.kind != CleanerSpec::Kind::None) {
      try {
        page = clean_page(original, spec.cleaner, tokenizer);
      } catch (const CleaningFailed&) {
        rec.cleaning_failed = true;
      }
    }
    try {
      if (spec.extractor == ExtractorKind::Script) {
        const auto script = script_for(page.site);
        if (!script) {
          throw DataError("no script artifact for site " + page.site);
        }
        outputs[i] = extract_with_script(*script, page, *ctx.sandbox, exec_options);
      } else {
        RenderedPrompt prompt;
        if (spec.extractor == ExtractorKind::ZeroShot) {
          prompt = render(PromptId::TE_ZeroShot,
                          {{"title", page.title}, {"html", page.html}});
        } else if (spec.split == Split::InDomain) {
          prompt = render_few_shot_extraction(
              page, select_same_site(*pool, page, spec.effective_shots(),
                                     spec.seed));
        } else {
          prompt = render_few_shot_extraction(page, layout_exemplars);
        }
        ChatRequest req = ChatRequest::from_prompt(spec.model.model, prompt);
        req.max_output_tokens = spec.model.max_output_tokens;
        const ParsedTriples parsed =
            parse_triple_lines(ctx.gateway->complete(req).text);
        outputs[i] = parsed.triples;
        rec.rejected_lines = parsed.rejected.size();
      }
    } catch (const ContextOverflow& e) {
      rec.status = PageStatus::Overflow;
      rec.error = e.what();
    } catch (const TransportFailed&) {
      throw;
    } catch (const ReplayMiss&) {
      throw;
    } catch (const Error& e) {
      rec.status = PageStatus::Error;
      rec.error = e.what();
    }
    rec.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
  });

  for (std::size_t i = 0; i < corpus.pages.size(); ++i) {
    run.predictions.touch(records[i].page_id);
    for (auto& t : outputs[i]) run.predictions.add(records[i].page_id, std::move(t));
  }
  run.pages = std::move(records);

  json pages = json::array();
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& r : run.pages) {
    ++counts[static_cast<int>(r.status)];
    json p = {{"page_id", r.page_id},
              {"site", r.site},
              {"layout", layout_tag(r.layout)},
              {"status", to_string(r.status)},
              {"triples", run.predictions.get(r.page_id).size()},
              {"rejected_lines", r.rejected_lines},
              {"wall_time_seconds", r.wall_time_seconds}};
    if (!r.error.empty()) p["error"] = r.error;
    if (r.cleaning_failed) p["cleaning_failed"] = true;
    pages.push_back(std::move(p));
  }
  run.manifest = {
      {"kind", "extraction_manifest"},
      {"spec_hash", spec.hash()},
      {"extractor", to_string(spec.extractor)},
      {"split_check", run.split_check},
      {"counts", {{"ok", counts[0]}, {"overflow", counts[1]}, {"error", counts[2]}}},
      {"pages", std::move(pages)},
      {"wall_time_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start)
           .count()}};
  if (spec.extractor == ExtractorKind::FewShot) {
    run.manifest["shots"] = spec.effective_shots();
  }
  return run;
}

inline std::string predictions_jsonl(const TripleCorpus& predictions) {
  std::vector<std::string> ids = predictions.page_order;
  std::sort(ids.begin(), ids.end());
  std::ostringstream out;
  for (const auto& id : ids) write_triples(out, id, predictions.get(id));
  return out.str();
}

inline void write_extraction(const ExtractionRun& run,
                             const std::filesystem::path& dir) {
  write_text_file(dir / "predictions.jsonl", predictions_jsonl(run.predictions));
  write_text_file(dir / "manifest.json", run.manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Script forging per site
// ---------------------------------------------------------------------------

struct SiteForgeResult {
  std::string site;
  std::optional<ScriptCandidate> script;
  std::string error;
  std::vector<std::string> exemplar_pages;
};

/// Forges one script per evaluation site from two labelled exemplar pages of
/// that site and saves it to the scripts directory.
inline std::vector<SiteForgeResult> forge_sites(const ExperimentSpec& spec,
                                                const Gateway& gateway,
                                                Sandbox& sandbox) {
  if (spec.scripts_dir.empty()) {
    throw DataError("forge-script requires extractor.scripts_dir");
  }
  if (spec.exemplar_pages.empty() || spec.exemplar_gold.empty()) {
    throw DataError("forge-script needs exemplar_pages and exemplar_gold");
  }
  const Tokenizer tokenizer(spec.tokenizer);
  const Corpus corpus = load_eval_pages(spec, tokenizer);
  const ExemplarPool pool{make_corpus(read_pages(spec.exemplar_pages, tokenizer)),
                          read_triples(spec.exemplar_gold)};
  const std::vector<std::string> sites = [&] {
    const auto s = sites_of(corpus);
    return std::vector<std::string>(s.begin(), s.end());
  }();

  ForgeOptions options;
  options.model = spec.model.model;
  options.iterations = spec.forge_iterations;
  options.max_output_tokens = spec.model.max_output_tokens;
  options.exec_timeout_seconds = spec.sandbox.timeout_seconds;
  options.max_triples = spec.sandbox.max_triples;

  std::vector<SiteForgeResult> results(sites.size());
  parallel_for(sites.size(), spec.workers, [&](std::size_t i) {
    SiteForgeResult& r = results[i];
    r.site = sites[i];
    std::vector<const PageDocument*> candidates;
    for (const PageDocument* p : pool.labelled()) {
      if (p->site == r.site) candidates.push_back(p);
    }
    if (candidates.size() < 2) {
      r.error = "site needs 2 labelled exemplar pages, has " +
                std::to_string(candidates.size());
      return;
    }
    const auto pick =
        seeded_sample(candidates, 2, derive_seed(spec.seed, "forge:" + r.site));
    std::vector<ExemplarSample> samples;
    for (const PageDocument* p : pick) {
      samples.push_back({p->page_id, p->html, p->title, pool.gold.get(p->page_id),
                         spec.pseudo_labels});
      r.exemplar_pages.push_back(p->page_id);
    }
    try {
      ForgeResult forged = forge(samples[0], samples[1], gateway, sandbox, options);
      save_script_artifact(spec.scripts_dir, r.site, forged.best);
      r.script = std::move(forged.best);
    } catch (const ForgeFailed& e) {
      r.error = e.what();
    } catch (const EmptyScript& e) {
      r.error = e.what();
    } catch (const ContextOverflow& e) {
      r.error = e.what();
    }
  });
  return results;
}

inline json to_json(const std::vector<SiteForgeResult>& results) {
  json sites = json::array();
  for (const auto& r : results) {
    json j = {{"site", r.site}, {"exemplar_pages", r.exemplar_pages}};
    if (r.script) {
      j["status"] = "ok";
      j["origin"] = to_json(r.script->origin);
      j["exemplar_score"] = r.script->exemplar_score.value_or(0.0);
    } else {
      j["status"] = "error";
      j["error"] = r.error;
    }
    sites.push_back(std::move(j));
  }
  return {{"kind", "forge_manifest"}, {"sites", std::move(sites)}};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct PageInfo {
  std::string page_id;
  Layout layout = Layout::Unknown;
  PageStatus status = PageStatus::Ok;
};

struct PageScore {
  PageInfo info;
  MetricReport report;
  PageCounts counts;
};

struct LayoutGroup {
  Layout layout;
  std::size_t pages = 0;
  MetricReport report;
};

struct EvaluationResult {
  Averaging averaging = Averaging::Macro;
  bool with_lm = false;
  std::vector<PageScore> pages;  // page_id order
  MetricReport overall;
  std::vector<LayoutGroup> by_layout;  // A-V, Hz, F-F, Unknown; nonempty only
  std::size_t judge_calls = 0;
};

/// Page universe from an extraction manifest.
inline std::vector<PageInfo> pages_from_manifest(const json& manifest) {
  std::vector<PageInfo> out;
  try {
    for (const auto& p : manifest.at("pages")) {
      out.push_back({p.at("page_id").get<std::string>(),
                     parse_layout(p.value("layout", "")),
                     parse_page_status(p.at("status").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return out;
}

inline std::vector<PageInfo> pages_from_corpus(const Corpus& corpus) {
  std::vector<PageInfo> out;
  for (const auto& p : corpus.pages) out.push_back({p.page_id, p.layout});
  return out;
}

inline std::vector<PageInfo> pages_from_gold(const TripleCorpus& gold) {
  std::vector<PageInfo> out;
  for (const auto& id : gold.page_order) out.push_back({id});
  return out;
}

inline MetricReport aggregate(const std::vector<const PageScore*>& pages,
                              Averaging averaging, bool with_lm) {
  if (averaging == Averaging::Macro) {
    std::vector<MetricReport> reports;
    for (const auto* p : pages) reports.push_back(p->report);
    return macro_average(reports);
  }
  std::vector<PageCounts> counts;
  for (const auto* p : pages) counts.push_back(p->counts);
  return micro_average(counts, with_lm);
}

/// Scores every page of the universe. Overflow pages receive the all-zero
/// record; pages whose extraction failed are scored as empty predictions.
/// A prediction or gold page outside the universe, or a universe page with
/// no gold triples, is a data error.
inline EvaluationResult evaluate_run(std::vector<PageInfo> universe,
                                     const TripleCorpus& predictions,
                                     const TripleCorpus& gold,
                                     const TripleJudge* judge,
                                     Averaging averaging = Averaging::Macro,
                                     std::size_t workers = 1) {
  std::sort(universe.begin(), universe.end(),
            [](const auto& a, const auto& b) { return a.page_id < b.page_id; });
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < universe.size(); ++i) {
    if (!index.emplace(universe[i].page_id, i).second) {
      throw DataError("duplicate page_id " + universe[i].page_id);
    }
  }
  for (const auto& id : predictions.page_order) {
    if (!index.count(id)) throw DataError("unmatched prediction page_id " + id);
  }
  for (const auto& id : gold.page_order) {
    if (!index.count(id)) throw DataError("unmatched gold page_id " + id);
  }
  for (const auto& p : universe) {
    if (!gold.contains(p.page_id)) {
      throw DataError("no gold triples for page_id " + p.page_id);
    }
  }

  EvaluationResult res;
  res.averaging = averaging;
  res.with_lm = judge != nullptr;
  res.pages.resize(universe.size());
  parallel_for(universe.size(), workers, [&](std::size_t i) {
    PageScore& s = res.pages[i];
    s.info = universe[i];
    const TripleList& g = gold.get(s.info.page_id);
    if (s.info.status == PageStatus::Overflow) {
      s.report = MetricReport::zeros(res.with_lm);
      s.counts = overflow_counts(g);
      return;
    }
    const TripleList& p = s.info.status == PageStatus::Error
                              ? TripleList{}
                              : predictions.get(s.info.page_id);
    const PageEvaluation ev = evaluate_page_detailed(p, g, judge);
    s.report = ev.report;
    s.counts = ev.counts;
  });

  std::vector<const PageScore*> all;
  for (const auto& s : res.pages) {
    all.push_back(&s);
    res.judge_calls += s.counts.judge_calls;
  }
  res.overall = aggregate(all, averaging, res.with_lm);
  for (Layout layout : {Layout::AttributeValue, Layout::HorizontalTable,
                        Layout::FreeForm, Layout::Unknown}) {
    std::vector<const PageScore*> group;
    for (const auto* s : all) {
      if (s->info.layout == layout) group.push_back(s);
    }
    if (group.empty()) continue;
    res.by_layout.push_back(
        {layout, group.size(), aggregate(group, averaging, res.with_lm)});
  }
  return res;
}

inline json to_json(const EvaluationResult& r) {
  json by_layout = json::array();
  for (const auto& g : r.by_layout) {
    by_layout.push_back({{"layout", layout_tag(g.layout)},
                         {"pages", g.pages},
                         {"metrics", to_json(g.report)}});
  }
  json pages = json::array();
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : r.pages) {
    ++counts[static_cast<int>(s.info.status)];
    pages.push_back({{"page_id", s.info.page_id},
                     {"layout", layout_tag(s.info.layout)},
                     {"status", to_string(s.info.status)},
                     {"metrics", to_json(s.report)}});
  }
  return {{"kind", "evaluation"},
          {"averaging", r.averaging == Averaging::Macro ? "macro" : "micro"},
          {"judge", r.with_lm},
          {"judge_calls", r.judge_calls},
          {"pages_total", r.pages.size()},
          {"status_counts",
           {{"ok", counts[0]}, {"overflow", counts[1]}, {"error", counts[2]}}},
          {"overall", to_json(r.overall)},
          {"by_layout", std::move(by_layout)},
          {"pages", std::move(pages)}};
}

// ---------------------------------------------------------------------------
// Augmentation and QA
// ---------------------------------------------------------------------------

/// Reference text followed by one "(s, p, o)" line per triple.
inline std::string augment_reference(const std::string& reference,
                                     const TripleList& triples) {
  if (triples.empty()) return reference;
  return reference + "\n" + to_paren_lines(triples);
}

inline std::string base_reference(const PageDocument& page, QaReference mode) {
  switch (mode) {
    case QaReference::Flattened: return build_reference(page);
    case QaReference::Html: return page.html;
    case QaReference::None: return {};
  }
  return {};
}

struct QaRecord {
  QAOutcome outcome;
  PageStatus status = PageStatus::Ok;
  std::string error;
};

struct QaRun {
  std::vector<QaRecord> records;  // input order
  QAAggregate aggregate;
  bool with_judge = false;
};

struct QaContext {
  const Gateway* gateway = nullptr;
  const QaJudge* judge = nullptr;
};

inline QaRun run_augmented_qa(const ExperimentSpec& spec, const QaContext& ctx) {
  if (spec.qa.empty()) throw DataError("config: qa is required");
  if (!ctx.gateway) throw Error("QA requires a gateway");
  const Tokenizer tokenizer(spec.tokenizer);
  const Corpus corpus = load_eval_pages(spec, tokenizer);
  std::vector<QAPair> pairs = read_qa(spec.qa);
  std::erase_if(pairs, [&](const QAPair& q) {
    return !spec.sites.empty() && !corpus.find(q.page_id);
  });
  for (const auto& q : pairs) {
    if (!corpus.find(q.page_id)) {
      throw DataError("QA pair refers to unknown page_id " + q.page_id);
    }
  }
  std::optional<TripleCorpus> extra;
  if (!spec.augmentation.empty()) extra = read_triples(spec.augmentation);

  std::optional<Corpus> shot_pages;
  std::vector<QAPair> shot_pairs;
  const std::set<std::string> eval_sites = sites_of(corpus);
  if (spec.qa_shots) {
    if (spec.qa_exemplars.empty() || spec.exemplar_pages.empty()) {
      throw DataError("few-shot QA needs qa_exemplars and exemplar_pages");
    }
    shot_pages = make_corpus(read_pages(spec.exemplar_pages, tokenizer));
    shot_pairs = read_qa(spec.qa_exemplars);
    for (const auto& q : shot_pairs) {
      if (!shot_pages->find(q.page_id)) {
        throw DataError("QA exemplar refers to unknown page_id " + q.page_id);
      }
    }
  }
  auto shots_for = [&](const PageDocument& page) {
    std::vector<const QAPair*> candidates;
    for (const auto& q : shot_pairs) {
      if (q.page_id == page.page_id) continue;
      const std::string& site = shot_pages->find(q.page_id)->site;
      const bool eligible = spec.split == Split::InDomain
                                ? site == page.site
                                : !eval_sites.count(site);
      if (eligible) candidates.push_back(&q);
    }
    if (candidates.size() < spec.qa_shots) {
      throw DataError("not enough QA exemplars for site " + page.site);
    }
    const std::string key = spec.split == Split::InDomain
                                ? "qa:" + page.site
                                : std::string("qa:out_of_domain");
    return seeded_sample(candidates, spec.qa_shots, derive_seed(spec.seed, key));
  };

  QaRun run;
  run.with_judge = ctx.judge != nullptr;
  run.records.resize(pairs.size());
  parallel_for(pairs.size(), spec.workers, [&](std::size_t i) {
    const QAPair& qa = pairs[i];
    const PageDocument& page = *corpus.find(qa.page_id);
    QaRecord& rec = run.records[i];
    RenderedPrompt prompt;
    if (spec.qa_reference == QaReference::None) {
      prompt = render(PromptId::QA_NoRef, {{"question", qa.question}});
    } else {
      std::string reference = base_reference(page, spec.qa_reference);
      if (extra) reference = augment_reference(reference, extra->get(page.page_id));
      if (spec.qa_shots == 0) {
        prompt = render(PromptId::QA_WithRef,
                        {{"question", qa.question}, {"reference", reference}});
      } else {
        PromptTemplate tpl{PromptId::QA_FewShot, few_shot_qa_system(spec.qa_shots),
                           std::string(prompt_text::kQaUser)};
        PromptVars vars{{"question", qa.question}, {"reference", reference}};
        const auto shots = shots_for(page);
        for (std::size_t k = 0; k < shots.size(); ++k) {
          const std::string n = std::to_string(k + 1);
          vars["question_" + n] = shots[k]->question;
          vars["reference_" + n] = base_reference(
              *shot_pages->find(shots[k]->page_id), spec.qa_reference);
          vars["answer_" + n] = shots[k]->answer;
        }
        prompt = tpl.render(vars);
      }
    }
    ChatRequest req = ChatRequest::from_prompt(spec.model.model, prompt);
    req.max_output_tokens = spec.model.max_output_tokens;
    try {
      rec.outcome = score_answer(qa, ctx.gateway->complete(req).text, ctx.judge);
      return;
    } catch (const ContextOverflow& e) {
      rec.status = PageStatus::Overflow;
      rec.error = e.what();
    }
    rec.outcome.page_id = qa.page_id;
    rec.outcome.question = qa.question;
    rec.outcome.ground_truth = qa.answer;
    if (ctx.judge) rec.outcome.correct_LM = false;
  });

  std::vector<QAOutcome> outcomes;
  for (const auto& r : run.records) outcomes.push_back(r.outcome);
  run.aggregate = aggregate_qa(outcomes, run.with_judge);
  return run;
}

inline json to_json(const QaRun& run, const ExperimentSpec& spec) {
  json outcomes = json::array();
  for (const auto& r : run.records) {
    json j = to_json(r.outcome);
    j["status"] = to_string(r.status);
    if (!r.error.empty()) j["error"] = r.error;
    outcomes.push_back(std::move(j));
  }
  return {{"kind", "qa"},
          {"reference", to_string(spec.qa_reference)},
          {"augmentation", spec.augmentation.empty() ? json(nullptr)
                                                     : json(spec.augmentation)},
          {"shots", spec.qa_shots},
          {"aggregate", to_json(run.aggregate)},
          {"outcomes", std::move(outcomes)}};
}

/// Augmented reference per evaluation page, as JSONL in page_id order.
inline std::string augmented_references_jsonl(const ExperimentSpec& spec) {
  if (spec.augmentation.empty()) {
    throw DataError("augment requires an augmentation triples source");
  }
  if (spec.qa_reference == QaReference::None) {
    throw DataError("augment requires a reference mode other than none");
  }
  const Tokenizer tokenizer(spec.tokenizer);
  const Corpus corpus = load_eval_pages(spec, tokenizer);
  const TripleCorpus triples = read_triples(spec.augmentation);
  std::ostringstream out;
  for (const auto& page : corpus.pages) {
    json j = {{"page_id", page.page_id},
              {"reference", augment_reference(base_reference(page, spec.qa_reference),
                                              triples.get(page.page_id))}};
    out << j.dump() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class ReportFormat { Json, Table, Csv };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "table") return ReportFormat::Table;
  if (s == "csv") return ReportFormat::Csv;
  throw DataError("format must be json, table or csv");
}

inline const std::vector<std::string>& qa_columns() {
  static const std::vector<std::string> kColumns = {"Accuracy_A", "Accuracy_LM"};
  return kColumns;
}

/// A fraction as a percentage rounded to one decimal.
inline double to_percent(double fraction) {
  return std::round(fraction * 1000.0) / 10.0;
}

inline std::string format_percent(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", pct);
  return buf;
}

struct ReportRow {
  std::string scope;
  std::size_t count = 0;
  std::vector<std::optional<double>> values;  // percentages
};

struct ReportTable {
  std::string count_label;
  std::vector<std::string> columns;
  std::vector<ReportRow> rows;
};

inline ReportTable report_table(const json& doc) {
  const std::string kind = doc.value("kind", "");
  auto percents = [](const std::vector<std::optional<double>>& v) {
    std::vector<std::optional<double>> out;
    for (const auto& x : v) {
      out.push_back(x ? std::optional(to_percent(*x)) : std::nullopt);
    }
    return out;
  };
  try {
    if (kind == "evaluation") {
      ReportTable t{"pages", metric_columns(), {}};
      t.rows.push_back({"overall", doc.at("pages_total").get<std::size_t>(),
                        percents(metric_values(
                            metric_report_from_json(doc.at("overall"))))});
      for (const auto& g : doc.at("by_layout")) {
        t.rows.push_back({g.at("layout").get<std::string>(),
                          g.at("pages").get<std::size_t>(),
                          percents(metric_values(
                              metric_report_from_json(g.at("metrics"))))});
      }
      return t;
    }
    if (kind == "qa") {
      const json& a = doc.at("aggregate");
      ReportTable t{"questions", qa_columns(), {}};
      std::optional<double> lm;
      if (!a.at("accuracy_LM").is_null()) lm = a.at("accuracy_LM").get<double>();
      t.rows.push_back({"overall", a.at("n").get<std::size_t>(),
                        percents({a.at("accuracy_A").get<double>(), lm})});
      return t;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed results document: ") + e.what());
  }
  throw DataError("report expects an evaluation or qa results document");
}

inline std::string render_report(const json& doc, ReportFormat format) {
  const ReportTable t = report_table(doc);
  switch (format) {
    case ReportFormat::Json: {
      json rows = json::array();
      for (const auto& r : t.rows) {
        json values = json::object();
        for (std::size_t i = 0; i < t.columns.size(); ++i) {
          values[t.columns[i]] = r.values[i] ? json(*r.values[i]) : json(nullptr);
        }
        rows.push_back({{"scope", r.scope}, {t.count_label, r.count},
                        {"values", std::move(values)}});
      }
      return json{{"columns", t.columns}, {"rows", std::move(rows)}}.dump(2) + "\n";
    }
    case ReportFormat::Csv: {
      std::string out = "scope," + t.count_label;
      for (const auto& c : t.columns) out += "," + c;
      out += "\n";
      for (const auto& r : t.rows) {
        out += r.scope + "," + std::to_string(r.count);
        for (const auto& v : r.values) out += "," + (v ? format_percent(*v) : "");
        out += "\n";
      }
      return out;
    }
    case ReportFormat::Table: {
      std::vector<std::vector<std::string>> cells;
      std::vector<std::string> header = {"scope", t.count_label};
      header.insert(header.end(), t.columns.begin(), t.columns.end());
      cells.push_back(header);
      for (const auto& r : t.rows) {
        std::vector<std::string> line = {r.scope, std::to_string(r.count)};
        for (const auto& v : r.values) line.push_back(v ? format_percent(*v) : "-");
        cells.push_back(std::move(line));
      }
      std::vector<std::size_t> width(header.size(), 0);
      for (const auto& line : cells) {
        for (std::size_t i = 0; i < line.size(); ++i) {
          width[i] = std::max(width[i], line[i].size());
        }
      }
      std::string out;
      for (const auto& line : cells) {
        std::string row;
        for (std::size_t i = 0; i < line.size(); ++i) {
          if (i) row += "  ";
          const std::string pad(width[i] - line[i].size(), ' ');
          row += i == 0 ? line[i] + pad : pad + line[i];
        }
        while (!row.empty() && row.back() == ' ') row.pop_back();
        out += row + "\n";
      }
      return out;
    }
  }
  return {};
}

}  // namespace webtriples::bench
