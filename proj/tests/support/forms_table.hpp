#pragma once

// The forms-table page and its ten annotated triples, plus a hand-written
// table extractor for it.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "webtriples/page_model.hpp"
#include "webtriples/triple_core.hpp"

namespace forms {

inline std::string fixture_path(const std::string& name) {
  return std::string(WEBTRIPLES_FIXTURE_DIR) + "/" + name;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string html() { return read_file(fixture_path("forms_table.html")); }

inline webtriples::PageDocument page() {
  return webtriples::make_page("forms", html(),
                               "Criminal and Law Enforcement Forms",
                               webtriples::Layout::HorizontalTable);
}

inline webtriples::TripleList gold() {
  return webtriples::read_triples(fixture_path("forms_table_gold.jsonl")).get("forms");
}

/// Cell texts of each <tr>, header cells included.
inline std::vector<std::vector<std::string>> table_rows(const std::string& doc) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while ((pos = doc.find("<tr", pos)) != std::string::npos) {
    const std::size_t end = doc.find("</tr>", pos);
    const std::string row = doc.substr(pos, end - pos);
    std::vector<std::string> cells;
    std::size_t c = 0;
    while ((c = row.find("<t", c)) != std::string::npos) {
      if (row.compare(c, 3, "<td") != 0 && row.compare(c, 3, "<th") != 0) {
        ++c;
        continue;
      }
      const std::size_t open_end = row.find('>', c) + 1;
      const std::size_t close = row.find("</t", open_end);
      cells.push_back(webtriples::flatten_html(row.substr(open_end, close - open_end)));
      c = close;
    }
    rows.push_back(std::move(cells));
    pos = end;
  }
  return rows;
}

/// One triple per non-key column: (first cell, column header, cell).
inline webtriples::TripleList reference_extract(const std::string& doc) {
  const auto rows = table_rows(doc);
  webtriples::TripleList out;
  if (rows.empty()) return out;
  const auto& header = rows.front();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t c = 1; c < rows[r].size() && c < header.size(); ++c) {
      out.emplace_back(rows[r][0], header[c], rows[r][c]);
    }
  }
  return out;
}

}  // namespace forms
