#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "webtriples/error.hpp"
#include "webtriples/subprocess.hpp"
#include "webtriples/unicode.hpp"

namespace webtriples {

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// Layout annotation from the dataset. Never inferred.
enum class Layout { AttributeValue, HorizontalTable, FreeForm, Unknown };

inline std::string_view layout_tag(Layout layout) {
  switch (layout) {
    case Layout::AttributeValue: return "AV";
    case Layout::HorizontalTable: return "Hz";
    case Layout::FreeForm: return "FF";
    case Layout::Unknown: return "Unknown";
  }
  return "Unknown";
}

inline Layout parse_layout(std::string_view tag) {
  if (tag == "AV" || tag == "A-V") return Layout::AttributeValue;
  if (tag == "Hz") return Layout::HorizontalTable;
  if (tag == "FF" || tag == "F-F") return Layout::FreeForm;
  if (tag.empty() || tag == "Unknown") return Layout::Unknown;
  throw DataError("unknown layout tag: " + std::string(tag));
}

// ---------------------------------------------------------------------------
// Token counting
// ---------------------------------------------------------------------------

struct TokenizerSpec {
  enum class Kind { WhitespaceApprox, Vocabulary };
  Kind kind = Kind::WhitespaceApprox;
  std::string vocabulary_file;  // Vocabulary only: one token per line

  static TokenizerSpec whitespace() { return {}; }
  static TokenizerSpec vocabulary(std::string path) {
    return {Kind::Vocabulary, std::move(path)};
  }
};

/// Counts tokens under a TokenizerSpec. The vocabulary variant is a greedy
/// longest-prefix subword matcher inside whitespace-delimited words; a code
/// point with no vocabulary entry counts as one token.
class Tokenizer {
 public:
  Tokenizer() = default;

  explicit Tokenizer(const TokenizerSpec& spec) : spec_(spec) {
    if (spec.kind != TokenizerSpec::Kind::Vocabulary) return;
    std::ifstream in(spec.vocabulary_file);
    if (!in) {
      throw TokenizerUnavailable("cannot open vocabulary file: " +
                                 spec.vocabulary_file);
    }
    auto vocab = std::make_shared<Vocab>();
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      auto cps = unicode::decode(line);
      vocab->max_length = std::max(vocab->max_length, cps.size());
      vocab->pieces.insert(std::move(cps));
    }
    vocab_ = std::move(vocab);
  }

  const TokenizerSpec& spec() const { return spec_; }

  std::size_t count(std::string_view text) const {
    std::size_t total = 0;
    for_each_word(text, [&](std::u32string_view word) {
      total += vocab_ ? count_subwords(word) : 1;
    });
    return total;
  }

 private:
  struct Vocab {
    std::unordered_set<std::u32string> pieces;
    std::size_t max_length = 0;
  };

  template <typename F>
  static void for_each_word(std::string_view text, F&& f) {
    const auto cps = unicode::decode(text);
    std::size_t i = 0;
    while (i < cps.size()) {
      while (i < cps.size() && unicode::is_space(cps[i])) ++i;
      std::size_t start = i;
      while (i < cps.size() && !unicode::is_space(cps[i])) ++i;
      if (i > start) {
        f(std::u32string_view(cps).substr(start, i - start));
      }
    }
  }

  std::size_t count_subwords(std::u32string_view word) const {
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos < word.size()) {
      std::size_t take = 1;
      for (std::size_t len = std::min(vocab_->max_length, word.size() - pos);
           len > 0; --len) {
        if (vocab_->pieces.count(std::u32string(word.substr(pos, len)))) {
          take = len;
          break;
        }
      }
      pos += take;
      ++n;
    }
    return n;
  }

  TokenizerSpec spec_;
  std::shared_ptr<const Vocab> vocab_;
};

inline std::size_t count_tokens(std::string_view text,
                                const TokenizerSpec& spec = {}) {
  return Tokenizer(spec).count(text);
}

// ---------------------------------------------------------------------------
// HTML flattening
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline bool is_block_tag(std::string_view name) {
  static constexpr std::array<std::string_view, 14> kBlock = {
      "p",  "div", "tr", "li", "br", "h1",    "h2",
      "h3", "h4",  "h5", "h6", "table", "section", "article"};
  return std::find(kBlock.begin(), kBlock.end(), name) != kBlock.end();
}

inline bool is_skipped_element(std::string_view name) {
  return name == "script" || name == "style" || name == "head" ||
         name == "noscript";
}

inline std::optional<char32_t> named_entity(std::string_view name) {
  struct Entry {
    std::string_view name;
    char32_t cp;
  };
  static constexpr Entry kEntities[] = {
      {"amp", U'&'},       {"lt", U'<'},        {"gt", U'>'},
      {"quot", U'"'},      {"apos", U'\''},     {"nbsp", 0x00A0},
      {"copy", 0x00A9},    {"reg", 0x00AE},     {"trade", 0x2122},
      {"ndash", 0x2013},   {"mdash", 0x2014},   {"hellip", 0x2026},
      {"laquo", 0x00AB},   {"raquo", 0x00BB},   {"lsquo", 0x2018},
      {"rsquo", 0x2019},   {"ldquo", 0x201C},   {"rdquo", 0x201D},
      {"middot", 0x00B7},  {"bull", 0x2022},    {"times", 0x00D7},
      {"deg", 0x00B0},     {"euro", 0x20AC},    {"pound", 0x00A3},
      {"yen", 0x00A5},     {"cent", 0x00A2},    {"sect", 0x00A7},
      {"para", 0x00B6},    {"plusmn", 0x00B1},  {"frac12", 0x00BD},
      {"shy", 0x00AD},     {"ensp", 0x2002},    {"emsp", 0x2003},
      {"thinsp", 0x2009},
  };
  for (const auto& e : kEntities) {
    if (e.name == name) return e.cp;
  }
  return std::nullopt;
}

/// Decodes the entity starting at s[pos] == '&'. On success appends the
/// decoded text and returns the position after the ';'.
inline std::optional<std::size_t> decode_entity(std::string_view s,
                                                std::size_t pos,
                                                std::string& out) {
  std::size_t semi = s.find(';', pos + 1);
  if (semi == std::string_view::npos || semi - pos > 12) return std::nullopt;
  std::string_view body = s.substr(pos + 1, semi - pos - 1);
  if (body.empty()) return std::nullopt;
  if (body[0] == '#') {
    unsigned long value = 0;
    bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
    std::string_view digits = body.substr(hex ? 2 : 1);
    if (digits.empty()) return std::nullopt;
    for (char c : digits) {
      int d;
      if (c >= '0' && c <= '9') {
        d = c - '0';
      } else if (hex && c >= 'a' && c <= 'f') {
        d = c - 'a' + 10;
      } else if (hex && c >= 'A' && c <= 'F') {
        d = c - 'A' + 10;
      } else {
        return std::nullopt;
      }
      value = value * (hex ? 16 : 10) + static_cast<unsigned long>(d);
      if (value > 0x10FFFF) return std::nullopt;
    }
    char32_t cp = static_cast<char32_t>(value);
    if (cp == 0 || (cp >= 0xD800 && cp <= 0xDFFF)) cp = unicode::kReplacement;
    unicode::append(out, cp);
    return semi + 1;
  }
  if (auto cp = named_entity(body)) {
    unicode::append(out, *cp);
    return semi + 1;
  }
  return std::nullopt;
}

inline std::size_t find_ci(std::string_view haystack, std::string_view needle,
                           std::size_t from) {
  if (needle.size() > haystack.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      char a = haystack[i + k];
      if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
      if (a != needle[k]) {
        match = false;
        break;
      }
    }
    if (match) return i;
  }
  return std::string_view::npos;
}

/// Skips a tag body starting after its name; honours quoted attribute
/// values. Returns the position after '>' or npos when unterminated.
inline std::size_t skip_tag_body(std::string_view s, std::size_t pos) {
  char quote = 0;
  for (; pos < s.size(); ++pos) {
    char c = s[pos];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '>') {
      return pos + 1;
    }
  }
  return std::string_view::npos;
}

/// Splits on '\n', collapses whitespace runs within each line to one space,
/// trims, drops empty lines and protects tag-like '<' sequences.
inline std::string finish_lines(std::string_view raw) {
  std::string out;
  std::string line;
  auto flush = [&] {
    if (!line.empty() && line.back() == ' ') line.pop_back();
    if (line.empty()) return;
    if (!out.empty()) out += '\n';
    out += line;
    line.clear();
  };
  for (char32_t c : unicode::decode(raw)) {
    if (c == U'\n') {
      flush();
    } else if (unicode::is_space(c)) {
      if (!line.empty() && line.back() != ' ') line += ' ';
    } else {
      unicode::append(line, c);
    }
  }
  flush();

  // Output must never contain something that looks like markup.
  std::string safe;
  safe.reserve(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == '<' && i + 1 < out.size() &&
        (is_ascii_alpha(out[i + 1]) || out[i + 1] == '!' ||
         out[i + 1] == '/')) {
      safe += "&lt;";
    } else {
      safe += out[i];
    }
  }
  return safe;
}

}  // namespace detail

/// Visible text of an HTML document in document order. Block-level tags
/// (p, div, tr, li, br, h1-h6, table, section, article) start a new line;
/// all other tags are inline. Contents of script, style, head, noscript and
/// comments are dropped. Never fails: unterminated markup is stripped.
inline std::string flatten_html(std::string_view html_in) {
  const std::string html = unicode::sanitize(html_in);
  const std::string_view s = html;
  std::string raw;
  raw.reserve(s.size());

  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (c == '&') {
      if (auto next = detail::decode_entity(s, i, raw)) {
        i = *next;
      } else {
        raw += '&';
        ++i;
      }
      continue;
    }
    if (c != '<') {
      raw += (c == '\n' || c == '\r' || c == '\t' || c == '\f') ? ' ' : c;
      ++i;
      continue;
    }
    // Markup.
    if (s.compare(i, 4, "<!--") == 0) {
      std::size_t end = s.find("-->", i + 4);
      i = end == std::string_view::npos ? s.size() : end + 3;
      continue;
    }
    if (i + 1 < s.size() && (s[i + 1] == '!' || s[i + 1] == '?')) {
      std::size_t end = s.find('>', i + 2);
      i = end == std::string_view::npos ? s.size() : end + 1;
      continue;
    }
    bool closing = i + 1 < s.size() && s[i + 1] == '/';
    std::size_t name_start = i + (closing ? 2 : 1);
    if (name_start >= s.size() || !detail::is_ascii_alpha(s[name_start])) {
      raw += '<';
      ++i;
      continue;
    }
    std::size_t name_end = name_start;
    while (name_end < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[name_end])) ||
            s[name_end] == '-' || s[name_end] == ':')) {
      ++name_end;
    }
    const std::string name =
        detail::ascii_lower(s.substr(name_start, name_end - name_start));
    std::size_t after = detail::skip_tag_body(s, name_end);
    if (after == std::string_view::npos) break;  // unterminated: drop the rest
    bool self_closing = after >= 2 && s[after - 2] == '/';

    if (detail::is_block_tag(name)) raw += '\n';
    if (!closing && !self_closing && detail::is_skipped_element(name)) {
      std::size_t end = detail::find_ci(s, "</" + name, after);
      if (end == std::string_view::npos) {
        i = s.size();
      } else {
        std::size_t close = detail::skip_tag_body(s, end + 2 + name.size());
        i = close == std::string_view::npos ? s.size() : close;
      }
      continue;
    }
    i = after;
  }
  return detail::finish_lines(raw);
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

struct PageDocument {
  std::string page_id;
  std::string url;
  std::string site;  // grouping key for exemplar selection; see site_of()
  std::string html;
  std::string title;
  std::string flat_text;
  Layout layout = Layout::Unknown;
  std::size_t token_count = 0;
};

inline PageDocument make_page(std::string page_id, std::string html,
                              std::string title = {},
                              Layout layout = Layout::Unknown,
                              const Tokenizer& tokenizer = Tokenizer()) {
  PageDocument doc;
  doc.page_id = std::move(page_id);
  doc.html = unicode::sanitize(html);
  doc.title = unicode::sanitize(title);
  doc.flat_text = flatten_html(doc.html);
  doc.layout = layout;
  doc.token_count = tokenizer.count(doc.flat_text);
  return doc;
}

/// Title, newline, flattened text. Just the flattened text when the title is
/// empty.
inline std::string build_reference(const PageDocument& doc) {
  if (doc.title.empty()) return doc.flat_text;
  return doc.title + "\n" + doc.flat_text;
}

/// Host part of a URL, lowercased, without a leading "www.".
inline std::string url_host(std::string_view url) {
  std::size_t scheme = url.find("://");
  std::size_t start = scheme == std::string_view::npos ? 0 : scheme + 3;
  std::size_t end = url.find_first_of("/?#", start);
  std::string host(url.substr(start, end == std::string_view::npos
                                         ? std::string_view::npos
                                         : end - start));
  if (auto at = host.rfind('@'); at != std::string::npos) host.erase(0, at + 1);
  if (auto colon = host.find(':'); colon != std::string::npos) {
    host.erase(colon);
  }
  host = detail::ascii_lower(host);
  if (host.rfind("www.", 0) == 0) host.erase(0, 4);
  return host;
}

// ---------------------------------------------------------------------------
// Cleaning hook
// ---------------------------------------------------------------------------

struct CleanerSpec {
  enum class Kind { None, ExternalCommand };
  Kind kind = Kind::None;
  /// Shell command. If it contains {input_file}, the HTML is written to a
  /// temporary file whose quoted path replaces the placeholder; otherwise the
  /// HTML is piped on stdin. Cleaned HTML or text is read from stdout.
  std::string command_template;
  double timeout_seconds = 120.0;

  static CleanerSpec none() { return {}; }
  static CleanerSpec external(std::string command) {
    if (command.empty()) throw DataError("cleaner command must be nonempty");
    return {Kind::ExternalCommand, std::move(command)};
  }
};

namespace detail {

inline bool looks_like_markup(std::string_view s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] == '<' &&
        (is_ascii_alpha(s[i + 1]) || s[i + 1] == '!' || s[i + 1] == '/')) {
      return true;
    }
  }
  return false;
}

class TempFile {
 public:
  explicit TempFile(std::string_view contents) {
    auto dir = std::filesystem::temp_directory_path();
    std::string pattern = (dir / "webtriples-XXXXXX").string();
    int fd = ::mkstemp(pattern.data());
    if (fd < 0) throw Error("cannot create temporary file");
    path_ = pattern;
    std::size_t done = 0;
    while (done < contents.size()) {
      ssize_t n = ::write(fd, contents.data() + done, contents.size() - done);
      if (n <= 0) {
        ::close(fd);
        throw Error("cannot write temporary file");
      }
      done += static_cast<std::size_t>(n);
    }
    ::close(fd);
  }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace detail

/// Runs the configured cleaner and returns a new document. Markup output is
/// re-flattened; plain-text output is whitespace-normalized line by line.
inline PageDocument clean_page(const PageDocument& doc, const CleanerSpec& spec,
                               const Tokenizer& tokenizer = Tokenizer()) {
  if (spec.kind == CleanerSpec::Kind::None) return doc;
  if (spec.command_template.empty()) {
    throw DataError("external cleaner requires a command");
  }

  static constexpr std::string_view kPlaceholder = "{input_file}";
  std::optional<detail::TempFile> input;
  std::string command = spec.command_template;
  std::string_view stdin_data = doc.html;
  if (auto at = command.find(kPlaceholder); at != std::string::npos) {
    input.emplace(doc.html);
    const std::string quoted = shell_quote(input->path());
    while ((at = command.find(kPlaceholder)) != std::string::npos) {
      command.replace(at, kPlaceholder.size(), quoted);
    }
    stdin_data = {};
  }

  ProcessOptions options;
  options.timeout = std::chrono::milliseconds(
      static_cast<long long>(spec.timeout_seconds * 1000));
  ProcessResult r = run_shell(command, stdin_data, options);
  if (r.timed_out || r.signaled || r.exit_code != 0) {
    std::string why = r.timed_out   ? "timed out"
                      : r.signaled ? "killed by signal " + std::to_string(r.signal)
                                   : "exit code " + std::to_string(r.exit_code);
    throw CleaningFailed("cleaner failed on page " + doc.page_id + ": " + why,
                         r.err);
  }

  PageDocument cleaned = doc;
  cleaned.html = unicode::sanitize(r.out);
  cleaned.flat_text = detail::looks_like_markup(cleaned.html)
                          ? flatten_html(cleaned.html)
                          : detail::finish_lines(cleaned.html);
  cleaned.token_count = tokenizer.count(cleaned.flat_text);
  return cleaned;
}

// ---------------------------------------------------------------------------
// Corpus I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::string json_string_field(const nlohmann::json& j,
                                     const char* key, bool required,
                                     const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw DataError(where + ": missing field \"" + key + "\"");
    return {};
  }
  if (!it->is_string()) {
    throw DataError(where + ": field \"" + key + "\" must be a string");
  }
  return unicode::sanitize(it->get<std::string>());
}

/// Calls f(json, "path:line") for every nonblank line of a JSONL file.
template <typename F>
void for_each_jsonl(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    f(j, where);
  }
}

}  // namespace detail

inline PageDocument page_from_json(const nlohmann::json& j,
                                   const std::string& where,
                                   const Tokenizer& tokenizer = Tokenizer()) {
  std::string id = detail::json_string_field(j, "page_id", true, where);
  if (id.empty()) throw DataError(where + ": empty page_id");
  PageDocument doc = make_page(
      std::move(id), detail::json_string_field(j, "html", true, where),
      detail::json_string_field(j, "title", false, where),
      parse_layout(detail::json_string_field(j, "layout", false, where)),
      tokenizer);
  doc.url = detail::json_string_field(j, "url", false, where);
  doc.site = detail::json_string_field(j, "site", false, where);
  if (doc.site.empty()) doc.site = url_host(doc.url);
  if (doc.site.empty()) doc.site = doc.page_id;
  return doc;
}

/// Reads the page corpus: one JSON object per line with page_id, url,
/// title, html and an optional layout ("AV" | "Hz" | "FF") and site.
inline std::vector<PageDocument> read_pages(
    const std::string& path, const Tokenizer& tokenizer = Tokenizer()) {
  std::vector<PageDocument> pages;
  std::unordered_set<std::string> seen;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j,
                                   const std::string& where) {
    auto doc = page_from_json(j, where, tokenizer);
    if (!seen.insert(doc.page_id).second) {
      throw DataError(where + ": duplicate page_id " + doc.page_id);
    }
    pages.push_back(std::move(doc));
  });
  return pages;
}

inline nlohmann::json page_to_json(const PageDocument& doc) {
  nlohmann::json j = {{"page_id", doc.page_id},
                      {"url", doc.url},
                      {"title", doc.title},
                      {"html", doc.html}};
  if (doc.layout != Layout::Unknown) j["layout"] = layout_tag(doc.layout);
  if (!doc.site.empty()) j["site"] = doc.site;
  return j;
}

}  // namespace webtriples
