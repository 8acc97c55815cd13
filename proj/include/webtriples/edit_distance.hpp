#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "webtriples/unicode.hpp"

namespace webtriples {

/// Levenshtein distance over arbitrary element sequences (unit costs).
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return a.size();
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

/// Edit distance between two UTF-8 strings, counted in Unicode scalar
/// values.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  const std::u32string ca = unicode::decode(a);
  const std::u32string cb = unicode::decode(b);
  return levenshtein<char32_t>(ca, cb);
}

/// 1 - distance / max(|a|, |b|); 1 when both are empty.
inline double fuzzy_sim(std::string_view a, std::string_view b) {
  const std::u32string ca = unicode::decode(a);
  const std::u32string cb = unicode::decode(b);
  const std::size_t longest = std::max(ca.size(), cb.size());
  if (longest == 0) return 1.0;
  const auto d = levenshtein<char32_t>(ca, cb);
  return 1.0 - static_cast<double>(d) / static_cast<double>(longest);
}

}  // namespace webtriples
