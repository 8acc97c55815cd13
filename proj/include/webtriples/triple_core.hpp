#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/page_model.hpp"
#include "webtriples/unicode.hpp"

namespace webtriples {

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Field { Subject, Predicate, Object };

inline const std::string& field(const Triple& t, Field f) {
  switch (f) {
    case Field::Subject: return t.subject;
    case Field::Predicate: return t.predicate;
    case Field::Object: return t.object;
  }
  return t.object;
}

/// Disambiguation marker pair. Annotator-supplied context lives inside a
/// field as "<-- context --> text".
inline constexpr std::string_view kDisambiguationOpen = "<--";
inline constexpr std::string_view kDisambiguationClose = "-->";

namespace detail {

struct Span {
  std::size_t begin;  // position of "<--"
  std::size_t end;    // one past "-->"
};

/// Marker spans of a field, or nullopt if the markers are unbalanced.
inline std::optional<std::vector<Span>> disambiguation_spans(
    std::string_view s) {
  std::vector<Span> spans;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t open = s.find(kDisambiguationOpen, pos);
    std::size_t close = s.find(kDisambiguationClose, pos);
    if (open == std::string_view::npos && close == std::string_view::npos) {
      break;
    }
    if (open == std::string_view::npos || close < open) return std::nullopt;
    close = s.find(kDisambiguationClose, open + kDisambiguationOpen.size());
    if (close == std::string_view::npos) return std::nullopt;
    std::size_t next_open =
        s.find(kDisambiguationOpen, open + kDisambiguationOpen.size());
    if (next_open != std::string_view::npos && next_open < close) {
      return std::nullopt;
    }
    spans.push_back({open, close + kDisambiguationClose.size()});
    pos = close + kDisambiguationClose.size();
  }
  return spans;
}

inline std::string_view trim_ascii(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// A triple as annotated or extracted: fields may embed disambiguation
/// spans.
struct AnnotatedTriple {
  Triple triple;

  AnnotatedTriple() = default;
  AnnotatedTriple(Triple t) : triple(std::move(t)) {}  // NOLINT
  AnnotatedTriple(std::string s, std::string p, std::string o)
      : triple{std::move(s), std::move(p), std::move(o)} {}

  /// Disambiguation text of one field, spans joined by "; ". Empty optional
  /// when the field carries none (or its markers are unbalanced).
  std::optional<std::string> disambiguation(Field f) const {
    const std::string& text = field(triple, f);
    auto spans = detail::disambiguation_spans(text);
    if (!spans || spans->empty()) return std::nullopt;
    std::string joined;
    for (const auto& span : *spans) {
      auto inner = std::string_view(text).substr(
          span.begin + kDisambiguationOpen.size(),
          span.end - span.begin - kDisambiguationOpen.size() -
              kDisambiguationClose.size());
      if (!joined.empty()) joined += "; ";
      joined += detail::trim_ascii(inner);
    }
    return joined;
  }

  friend bool operator==(const AnnotatedTriple&,
                         const AnnotatedTriple&) = default;
};

/// Triples in document-appearance order.
using TripleList = std::vector<AnnotatedTriple>;

struct QAPair {
  std::string question;
  std::string answer;
  std::string page_id;
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Lowercase, collapse whitespace runs, trim, then strip leading and
/// trailing punctuation (Unicode P*). Interior punctuation is kept.
inline std::string normalize_text(std::string_view s) {
  const std::u32string cps = unicode::decode(unicode::to_lower(s));
  // Trim whitespace and punctuation from both ends until stable; a space
  // exposed by stripping "x ." must go as well.
  std::size_t b = 0, e = cps.size();
  while (b < e && (unicode::is_space(cps[b]) || unicode::is_punct(cps[b]))) {
    ++b;
  }
  while (e > b &&
         (unicode::is_space(cps[e - 1]) || unicode::is_punct(cps[e - 1]))) {
    --e;
  }
  std::string out;
  out.reserve(e - b);
  bool pending_space = false;
  for (std::size_t i = b; i < e; ++i) {
    if (unicode::is_space(cps[i])) {
      pending_space = true;
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    unicode::append(out, cps[i]);
  }
  return out;
}

inline Triple normalize(const Triple& t) {
  return {normalize_text(t.subject), normalize_text(t.predicate),
          normalize_text(t.object)};
}

/// Every field nonempty after normalization.
inline bool is_complete(const Triple& t) {
  return !normalize_text(t.subject).empty() &&
         !normalize_text(t.predicate).empty() &&
         !normalize_text(t.object).empty();
}

inline bool triples_equal_exact(const Triple& a, const Triple& b) {
  return normalize_text(a.subject) == normalize_text(b.subject) &&
         normalize_text(a.predicate) == normalize_text(b.predicate) &&
         normalize_text(a.object) == normalize_text(b.object);
}

// ---------------------------------------------------------------------------
// Disambiguation
// ---------------------------------------------------------------------------

/// Removes every "<-- ... -->" span plus one adjacent space (the following
/// one if present, else the preceding one). Unbalanced markers leave the
/// field untouched.
inline std::string strip_disambiguation(std::string_view text) {
  auto spans = detail::disambiguation_spans(text);
  if (!spans || spans->empty()) return std::string(text);
  std::string out;
  std::size_t pos = 0;
  for (const auto& span : *spans) {
    out.append(text.substr(pos, span.begin - pos));
    pos = span.end;
    if (pos < text.size() && text[pos] == ' ') {
      ++pos;
    } else if (!out.empty() && out.back() == ' ') {
      out.pop_back();
    }
  }
  out.append(text.substr(pos));
  return out;
}

inline Triple strip_disambiguation(const AnnotatedTriple& t) {
  return {strip_disambiguation(t.triple.subject),
          strip_disambiguation(t.triple.predicate),
          strip_disambiguation(t.triple.object)};
}

/// Strips disambiguation and drops incomplete triples, keeping order.
inline std::vector<Triple> prepare_for_evaluation(const TripleList& list) {
  std::vector<Triple> out;
  out.reserve(list.size());
  for (const auto& t : list) {
    Triple stripped = strip_disambiguation(t);
    if (is_complete(stripped)) out.push_back(std::move(stripped));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing model output
// ---------------------------------------------------------------------------

struct RejectedLine {
  std::size_t line_number;  // 1-based
  std::string text;
  std::string reason;
};

struct ParsedTriples {
  TripleList triples;
  std::vector<RejectedLine> rejected;
};

namespace detail {

/// Positions of ", " separators that are not inside a disambiguation span.
inline std::vector<std::size_t> top_level_separators(std::string_view s) {
  std::vector<std::size_t> seps;
  bool in_span = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!in_span && s.compare(i, kDisambiguationOpen.size(),
                              kDisambiguationOpen) == 0) {
      in_span = true;
      i += kDisambiguationOpen.size() - 1;
    } else if (in_span && s.compare(i, kDisambiguationClose.size(),
                                    kDisambiguationClose) == 0) {
      in_span = false;
      i += kDisambiguationClose.size() - 1;
    } else if (!in_span && s[i] == ',' && i + 1 < s.size() &&
               s[i + 1] == ' ') {
      seps.push_back(i);
    }
  }
  return seps;
}

/// Drops a leading list marker such as "- ", "* " or "12. ".
inline std::string_view strip_list_marker(std::string_view s) {
  if (s.size() >= 2 && (s[0] == '-' || s[0] == '*') && s[1] == ' ') {
    return trim_ascii(s.substr(2));
  }
  std::size_t i = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i > 0 && i + 1 < s.size() && (s[i] == '.' || s[i] == ')') &&
      s[i + 1] == ' ') {
    return trim_ascii(s.substr(i + 2));
  }
  return s;
}

}  // namespace detail

/// Parses one triple per line. Accepts "s<TAB>p<TAB>o" or "(s, p, o)"; the
/// parenthesized form splits at the first and last ", " found outside any
/// disambiguation span, so commas survive only inside the predicate. Lines
/// with fewer than three fields or an empty field are rejected.
inline ParsedTriples parse_triple_lines(std::string_view response) {
  ParsedTriples result;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= response.size()) {
    std::size_t nl = response.find('\n', pos);
    std::string_view raw = response.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? response.size() + 1 : nl + 1;
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    std::string_view line = detail::trim_ascii(raw);
    if (line.empty()) continue;

    auto reject = [&](std::string reason) {
      result.rejected.push_back({lineno, std::string(raw), std::move(reason)});
    };
    std::vector<std::string_view> fields;
    if (line.find('\t') != std::string_view::npos) {
      std::size_t start = 0;
      while (true) {
        std::size_t tab = line.find('\t', start);
        fields.push_back(line.substr(
            start, tab == std::string_view::npos ? std::string_view::npos
                                                 : tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
      }
      if (fields.size() != 3) {
        reject(fields.size() < 3 ? "incomplete triple" : "too many fields");
        continue;
      }
    } else {
      std::string_view body = detail::strip_list_marker(line);
      if (!body.empty() && body.back() == ',') {
        body = detail::trim_ascii(body.substr(0, body.size() - 1));
      }
      if (body.size() < 2 || body.front() != '(' || body.back() != ')') {
        reject("unrecognized triple format");
        continue;
      }
      body = body.substr(1, body.size() - 2);
      auto seps = detail::top_level_separators(body);
      if (seps.size() < 2) {
        reject("incomplete triple");
        continue;
      }
      fields = {body.substr(0, seps.front()),
                body.substr(seps.front() + 2, seps.back() - seps.front() - 2),
                body.substr(seps.back() + 2)};
    }
    for (auto& f : fields) f = detail::trim_ascii(f);
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      reject("empty field");
      continue;
    }
    result.triples.emplace_back(unicode::sanitize(fields[0]),
                                unicode::sanitize(fields[1]),
                                unicode::sanitize(fields[2]));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string to_tsv(const Triple& t) {
  return t.subject + '\t' + t.predicate + '\t' + t.object;
}

inline std::string to_paren(const Triple& t) {
  return "(" + t.subject + ", " + t.predicate + ", " + t.object + ")";
}

/// Canonical storage form: one "s<TAB>p<TAB>o" line per triple.
inline std::string to_tsv(const TripleList& list) {
  std::string out;
  for (const auto& t : list) {
    out += to_tsv(t.triple);
    out += '\n';
  }
  return out;
}

/// Prompt form: one "(s, p, o)" line per triple, no trailing newline.
inline std::string to_paren_lines(const TripleList& list) {
  std::string out;
  for (const auto& t : list) {
    if (!out.empty()) out += '\n';
    out += to_paren(t.triple);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus I/O
// ---------------------------------------------------------------------------

/// Triples grouped by page, in file order.
struct TripleCorpus {
  std::vector<std::string> page_order;
  std::unordered_map<std::string, TripleList> by_page;

  void add(const std::string& page_id, AnnotatedTriple t) {
    auto [it, inserted] = by_page.try_emplace(page_id);
    if (inserted) page_order.push_back(page_id);
    it->second.push_back(std::move(t));
  }

  /// Registers a page with no triples so it still appears in page_order.
  void touch(const std::string& page_id) {
    if (by_page.try_emplace(page_id).second) page_order.push_back(page_id);
  }

  const TripleList& get(const std::string& page_id) const {
    static const TripleList kEmpty;
    auto it = by_page.find(page_id);
    return it == by_page.end() ? kEmpty : it->second;
  }

  bool contains(const std::string& page_id) const {
    return by_page.count(page_id) > 0;
  }
};

/// Reads {"page_id", "subject", "predicate", "object"} lines.
inline TripleCorpus read_triples(const std::string& path) {
  TripleCorpus corpus;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j,
                                   const std::string& where) {
    std::string page = detail::json_string_field(j, "page_id", true, where);
    corpus.add(page, AnnotatedTriple(
                         detail::json_string_field(j, "subject", true, where),
                         detail::json_string_field(j, "predicate", true, where),
                         detail::json_string_field(j, "object", true, where)));
  });
  return corpus;
}

inline void write_triples(std::ostream& out, const std::string& page_id,
                          const TripleList& list) {
  for (const auto& t : list) {
    nlohmann::json j = {{"page_id", page_id},
                        {"subject", t.triple.subject},
                        {"predicate", t.triple.predicate},
                        {"object", t.triple.object}};
    out << j.dump() << '\n';
  }
}

/// Reads {"page_id", "question", "answer"} lines.
inline std::vector<QAPair> read_qa(const std::string& path) {
  std::vector<QAPair> pairs;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j,
                                   const std::string& where) {
    QAPair qa{detail::json_string_field(j, "question", true, where),
              detail::json_string_field(j, "answer", true, where),
              detail::json_string_field(j, "page_id", true, where)};
    if (qa.question.empty() || qa.answer.empty()) {
      throw DataError(where + ": question and answer must be nonempty");
    }
    pairs.push_back(std::move(qa));
  });
  return pairs;
}

}  // namespace webtriples
