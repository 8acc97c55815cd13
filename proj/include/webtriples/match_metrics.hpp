#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/assignment.hpp"
#include "webtriples/edit_distance.hpp"
#include "webtriples/triple_core.hpp"

namespace webtriples {

/// rows = predicted triples, cols = gold triples; entries in [0, 1].
using ScoreMatrix = Matrix<double>;

/// Returns true when two triples are semantically the same. Throws
/// JudgeUnavailable when the judge cannot be reached.
using TripleJudge = std::function<bool(const Triple& pred, const Triple& gold)>;

/// Harmonic mean, 0 when p + r == 0. Clamped to [min, max] so the ordering
/// property survives rounding.
inline double harmonic_f1(double p, double r) {
  if (p + r == 0.0) return 0.0;
  if (p == r) return p;
  const double f = 2.0 * p * r / (p + r);
  return std::clamp(f, std::min(p, r), std::max(p, r));
}

/// Canonical per-triple serialization used for edit distances: normalized
/// fields joined by TAB.
inline std::string serialize_for_matching(const Triple& t) {
  return normalize_text(t.subject) + '\t' + normalize_text(t.predicate) +
         '\t' + normalize_text(t.object);
}

inline std::string serialize_for_matching(const std::vector<Triple>& list) {
  std::string out;
  for (const auto& t : list) {
    if (!out.empty()) out += '\n';
    out += serialize_for_matching(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global fuzzy match
// ---------------------------------------------------------------------------

struct GlobalFuzzy {
  double similarity = 1.0;
  std::size_t distance = 0;
  std::size_t max_length = 0;
};

inline GlobalFuzzy global_fuzzy(const std::vector<Triple>& pred,
                                const std::vector<Triple>& gold) {
  const auto a = unicode::decode(serialize_for_matching(pred));
  const auto b = unicode::decode(serialize_for_matching(gold));
  GlobalFuzzy g;
  g.max_length = std::max(a.size(), b.size());
  if (g.max_length == 0) return g;
  g.distance = levenshtein<char32_t>(a, b);
  g.similarity = 1.0 - static_cast<double>(g.distance) /
                           static_cast<double>(g.max_length);
  return g;
}

/// Fuzzy similarity of the two lists taken as a whole. Inputs are expected
/// stripped and complete.
inline double global_fm(const std::vector<Triple>& pred,
                        const std::vector<Triple>& gold) {
  return global_fuzzy(pred, gold).similarity;
}

// ---------------------------------------------------------------------------
// Pairwise matching
// ---------------------------------------------------------------------------

inline ScoreMatrix build_score_matrix(const std::vector<Triple>& pred,
                                      const std::vector<Triple>& gold) {
  ScoreMatrix m(pred.size(), gold.size());
  std::vector<std::string> gold_keys;
  gold_keys.reserve(gold.size());
  for (const auto& g : gold) gold_keys.push_back(serialize_for_matching(g));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::string key = serialize_for_matching(pred[i]);
    for (std::size_t j = 0; j < gold.size(); ++j) {
      m(i, j) = fuzzy_sim(key, gold_keys[j]);
    }
  }
  return m;
}

struct TripleMatching {
  Assignment assignment;  // rows index pred, cols index gold
  ScoreMatrix scores;
  /// Matched similarities summed in ascending order.
  double similarity_sum = 0.0;
};

/// Maximum-weight matching between predicted and gold triples.
///
/// The solver always runs on a canonical orientation (fewer rows; on a tie
/// the lexicographically smaller serialized list as rows) so that swapping
/// the arguments yields the same matching and a bit-identical sum.
inline TripleMatching match_triples(const std::vector<Triple>& pred,
                                    const std::vector<Triple>& gold) {
  TripleMatching out;
  out.scores = build_score_matrix(pred, gold);
  if (pred.empty() || gold.empty()) return out;

  bool transpose = gold.size() < pred.size();
  if (gold.size() == pred.size()) {
    std::vector<std::string> p, g;
    for (const auto& t : pred) p.push_back(serialize_for_matching(t));
    for (const auto& t : gold) g.push_back(serialize_for_matching(t));
    transpose = g < p;
  }
  if (!transpose) {
    out.assignment = munkres_assign(out.scores);
  } else {
    ScoreMatrix t(gold.size(), pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      for (std::size_t j = 0; j < gold.size(); ++j) t(j, i) = out.scores(i, j);
    }
    Assignment a = munkres_assign(t);
    for (auto& [r, c] : a.pairs) std::swap(r, c);
    std::sort(a.pairs.begin(), a.pairs.end());
    out.assignment = std::move(a);
  }
  check_one_to_one(out.assignment, pred.size(), gold.size());

  std::vector<double> weights;
  for (auto [r, c] : out.assignment.pairs) weights.push_back(out.scores(r, c));
  std::sort(weights.begin(), weights.end());
  for (double w : weights) out.similarity_sum += w;
  out.assignment.total = out.similarity_sum;
  return out;
}

// ---------------------------------------------------------------------------
// Metric families
// ---------------------------------------------------------------------------

struct EmScores {
  double em = 0, precision = 0, recall = 0, f1 = 0;
  std::size_t intersection = 0, pred_size = 0, gold_size = 0;
};

/// Exact-match metrics on the sets of normalized triples.
inline EmScores em_metrics(const std::vector<Triple>& pred,
                           const std::vector<Triple>& gold) {
  auto keys = [](const std::vector<Triple>& list) {
    std::unordered_set<std::string> set;
    for (const auto& t : list) set.insert(serialize_for_matching(t));
    return set;
  };
  const auto a = keys(pred);
  const auto b = keys(gold);
  EmScores s;
  s.pred_size = a.size();
  s.gold_size = b.size();
  if (a.empty() && b.empty()) {
    s.em = s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  for (const auto& k : a) s.intersection += b.count(k);
  const double inter = static_cast<double>(s.intersection);
  s.em = inter / static_cast<double>(std::max(a.size(), b.size()));
  s.precision = a.empty() ? 0.0 : inter / static_cast<double>(a.size());
  s.recall = b.empty() ? 0.0 : inter / static_cast<double>(b.size());
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

struct PrfScores {
  double precision = 0, recall = 0, f1 = 0;
};

namespace detail {

inline PrfScores prf(double numerator, std::size_t pred_n,
                     std::size_t gold_n) {
  PrfScores s;
  if (pred_n == 0 && gold_n == 0) return {1.0, 1.0, 1.0};
  s.precision = pred_n == 0 ? 0.0 : numerator / static_cast<double>(pred_n);
  s.recall = gold_n == 0 ? 0.0 : numerator / static_cast<double>(gold_n);
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

}  // namespace detail

inline PrfScores fm_metrics(const TripleMatching& matching,
                            std::size_t pred_n, std::size_t gold_n) {
  return detail::prf(matching.similarity_sum, pred_n, gold_n);
}

/// Fuzzy-match precision/recall: matched similarity mass over list sizes.
inline PrfScores fm_metrics(const std::vector<Triple>& pred,
                            const std::vector<Triple>& gold) {
  return fm_metrics(match_triples(pred, gold), pred.size(), gold.size());
}

struct LmScores {
  PrfScores prf;
  std::size_t matched = 0;
  std::size_t judge_calls = 0;
};

/// Judge-based precision/recall over the assignment. Exact-equal pairs are
/// accepted without asking the judge.
inline LmScores lm_metrics(const std::vector<Triple>& pred,
                           const std::vector<Triple>& gold,
                           const TripleMatching& matching,
                           const TripleJudge& judge) {
  LmScores s;
  for (auto [r, c] : matching.assignment.pairs) {
    if (triples_equal_exact(pred[r], gold[c])) {
      ++s.matched;
      continue;
    }
    ++s.judge_calls;
    if (judge(pred[r], gold[c])) ++s.matched;
  }
  s.prf = detail::prf(static_cast<double>(s.matched), pred.size(), gold.size());
  return s;
}

inline LmScores lm_metrics(const std::vector<Triple>& pred,
                           const std::vector<Triple>& gold,
                           const TripleJudge& judge) {
  return lm_metrics(pred, gold, match_triples(pred, gold), judge);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Extraction metrics for one page or an aggregate. LM fields are empty when
/// no judge was configured.
struct MetricReport {
  double fm_global = 0;
  double em = 0, p_em = 0, r_em = 0, f1_em = 0;
  double p_fm = 0, r_fm = 0, f1_fm = 0;
  std::optional<double> p_lm, r_lm, f1_lm;

  bool has_lm() const { return p_lm.has_value(); }

  /// The record assigned to pages that could not be processed because they
  /// exceed the context window.
  static MetricReport zeros(bool with_lm) {
    MetricReport r;
    if (with_lm) r.p_lm = r.r_lm = r.f1_lm = 0.0;
    return r;
  }

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Fixed column order for every rendering of extraction metrics.
inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> kColumns = {
      "FM",   "EM",   "P_EM",  "R_EM", "F1_EM", "P_FM",
      "R_FM", "F1_FM", "P_LM", "R_LM", "F1_LM"};
  return kColumns;
}

/// Values in metric_columns() order.
inline std::vector<std::optional<double>> metric_values(const MetricReport& r) {
  return {r.fm_global, r.em,   r.p_em, r.r_em, r.f1_em, r.p_fm,
          r.r_fm,      r.f1_fm, r.p_lm, r.r_lm, r.f1_lm};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = nlohmann::json::object();
  const auto& cols = metric_columns();
  const auto vals = metric_values(r);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    j[cols[i]] = vals[i] ? nlohmann::json(*vals[i]) : nlohmann::json(nullptr);
  }
  return j;
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  auto req = [&](const char* k) {
    if (!j.contains(k) || !j.at(k).is_number()) {
      throw DataError(std::string("metric report: missing ") + k);
    }
    return j.at(k).get<double>();
  };
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  MetricReport r;
  r.fm_global = req("FM");
  r.em = req("EM");
  r.p_em = req("P_EM");
  r.r_em = req("R_EM");
  r.f1_em = req("F1_EM");
  r.p_fm = req("P_FM");
  r.r_fm = req("R_FM");
  r.f1_fm = req("F1_FM");
  r.p_lm = opt("P_LM");
  r.r_lm = opt("R_LM");
  r.f1_lm = opt("F1_LM");
  return r;
}

/// Raw counts behind a page report, kept for micro-averaging.
struct PageCounts {
  std::size_t pred_triples = 0;   // after filtering
  std::size_t gold_triples = 0;
  std::size_t em_intersection = 0, em_pred = 0, em_gold = 0;
  double fm_similarity_sum = 0;
  std::size_t lm_matched = 0;
  std::size_t global_distance = 0, global_max_length = 0;
  std::size_t judge_calls = 0;
};

struct PageEvaluation {
  MetricReport report;
  PageCounts counts;
};

/// Scores one page. Disambiguation spans are stripped and incomplete triples
/// dropped on both sides before any metric is computed.
inline PageEvaluation evaluate_page_detailed(const TripleList& pred_raw,
                                             const TripleList& gold_raw,
                                             const TripleJudge* judge) {
  const auto pred = prepare_for_evaluation(pred_raw);
  const auto gold = prepare_for_evaluation(gold_raw);
  PageEvaluation out;
  auto& r = out.report;
  auto& c = out.counts;
  c.pred_triples = pred.size();
  c.gold_triples = gold.size();

  const auto global = global_fuzzy(pred, gold);
  r.fm_global = global.similarity;
  c.global_distance = global.distance;
  c.global_max_length = global.max_length;

  const auto em = em_metrics(pred, gold);
  r.em = em.em;
  r.p_em = em.precision;
  r.r_em = em.recall;
  r.f1_em = em.f1;
  c.em_intersection = em.intersection;
  c.em_pred = em.pred_size;
  c.em_gold = em.gold_size;

  const auto matching = match_triples(pred, gold);
  const auto fm = fm_metrics(matching, pred.size(), gold.size());
  r.p_fm = fm.precision;
  r.r_fm = fm.recall;
  r.f1_fm = fm.f1;
  c.fm_similarity_sum = matching.similarity_sum;

  if (judge) {
    const auto lm = lm_metrics(pred, gold, matching, *judge);
    r.p_lm = lm.prf.precision;
    r.r_lm = lm.prf.recall;
    r.f1_lm = lm.prf.f1;
    c.lm_matched = lm.matched;
    c.judge_calls = lm.judge_calls;
  }
  return out;
}

inline MetricReport evaluate_page(const TripleList& pred,
                                  const TripleList& gold,
                                  const TripleJudge* judge = nullptr) {
  return evaluate_page_detailed(pred, gold, judge).report;
}

/// Counts for a page scored with the overflow sentinel: nothing predicted.
inline PageCounts overflow_counts(const TripleList& gold_raw) {
  const auto gold = prepare_for_evaluation(gold_raw);
  PageCounts c;
  c.gold_triples = gold.size();
  c.em_gold = em_metrics({}, gold).gold_size;
  c.global_max_length =
      unicode::decode(serialize_for_matching(gold)).size();
  c.global_distance = c.global_max_length;
  return c;
}

enum class Averaging { Macro, Micro };

/// Unweighted mean of page reports. LM fields are present only if every
/// page has them. An empty input yields all zeros.
inline MetricReport macro_average(const std::vector<MetricReport>& pages) {
  MetricReport out;
  if (pages.empty()) return out;
  const bool lm = std::all_of(pages.begin(), pages.end(),
                              [](const auto& p) { return p.has_lm(); });
  double sums[11] = {};
  for (const auto& p : pages) {
    auto vals = metric_values(p);
    for (std::size_t i = 0; i < 11; ++i) sums[i] += vals[i].value_or(0.0);
  }
  const double n = static_cast<double>(pages.size());
  out.fm_global = sums[0] / n;
  out.em = sums[1] / n;
  out.p_em = sums[2] / n;
  out.r_em = sums[3] / n;
  out.f1_em = sums[4] / n;
  out.p_fm = sums[5] / n;
  out.r_fm = sums[6] / n;
  out.f1_fm = sums[7] / n;
  if (lm) {
    out.p_lm = sums[8] / n;
    out.r_lm = sums[9] / n;
    out.f1_lm = sums[10] / n;
  }
  return out;
}

/// Pooled-count averaging: numerators and denominators are summed across
/// pages before dividing.
inline MetricReport micro_average(const std::vector<PageCounts>& pages,
                                  bool with_lm) {
  PageCounts t;
  for (const auto& c : pages) {
    t.pred_triples += c.pred_triples;
    t.gold_triples += c.gold_triples;
    t.em_intersection += c.em_intersection;
    t.em_pred += c.em_pred;
    t.em_gold += c.em_gold;
    t.fm_similarity_sum += c.fm_similarity_sum;
    t.lm_matched += c.lm_matched;
    t.global_distance += c.global_distance;
    t.global_max_length += c.global_max_length;
  }
  auto ratio = [](double num, double den) { return den == 0 ? 0.0 : num / den; };
  MetricReport r;
  if (pages.empty()) return r;
  r.fm_global = t.global_max_length == 0
                    ? 1.0
                    : 1.0 - ratio(static_cast<double>(t.global_distance),
                                  static_cast<double>(t.global_max_length));
  std::size_t em_max = 0;
  for (const auto& c : pages) em_max += std::max(c.em_pred, c.em_gold);
  if (t.em_pred == 0 && t.em_gold == 0) {
    r.em = r.p_em = r.r_em = r.f1_em = 1.0;
  } else {
    const double inter = static_cast<double>(t.em_intersection);
    r.em = ratio(inter, static_cast<double>(em_max));
    r.p_em = ratio(inter, static_cast<double>(t.em_pred));
    r.r_em = ratio(inter, static_cast<double>(t.em_gold));
    r.f1_em = harmonic_f1(r.p_em, r.r_em);
  }
  const auto fm = detail::prf(t.fm_similarity_sum, t.pred_triples,
                              t.gold_triples);
  r.p_fm = fm.precision;
  r.r_fm = fm.recall;
  r.f1_fm = fm.f1;
  if (with_lm) {
    const auto lm = detail::prf(static_cast<double>(t.lm_matched),
                                t.pred_triples, t.gold_triples);
    r.p_lm = lm.precision;
    r.r_lm = lm.recall;
    r.f1_lm = lm.f1;
  }
  return r;
}

}  // namespace webtriples
