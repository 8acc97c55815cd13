#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "webtriples/assignment.hpp"
#include "webtriples/triple_core.hpp"
#include "webtriples/unicode.hpp"

namespace oracle {

/// Edit distance by top-down recursion with memoization.
inline std::size_t levenshtein_memo(const std::u32string& a,
                                    const std::u32string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> d =
      [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = std::min(d(i - 1, j) + 1, d(i, j - 1) + 1);
    best = std::min(best, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
    memo[key] = best;
    return best;
  };
  return d(a.size(), b.size());
}

inline std::size_t levenshtein_memo(const std::string& a, const std::string& b) {
  return levenshtein_memo(webtriples::unicode::decode(a),
                          webtriples::unicode::decode(b));
}

inline double fuzzy_sim(const std::string& a, const std::string& b) {
  const std::size_t la = webtriples::unicode::decode(a).size();
  const std::size_t lb = webtriples::unicode::decode(b).size();
  if (la == 0 && lb == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein_memo(a, b)) /
                   static_cast<double>(std::max(la, lb));
}

/// Maximum total weight over all one-to-one partial assignments that match
/// min(rows, cols) pairs, by enumerating permutations of the larger side.
inline double best_assignment(const webtriples::Matrix<double>& m) {
  const std::size_t r = m.rows(), c = m.cols();
  if (r == 0 || c == 0) return 0.0;
  const bool rows_small = r <= c;
  const std::size_t small = rows_small ? r : c;
  const std::size_t large = rows_small ? c : r;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0;
  do {
    std::vector<double> picked;
    for (std::size_t i = 0; i < small; ++i) {
      picked.push_back(rows_small ? m(i, perm[i]) : m(perm[i], i));
    }
    std::sort(picked.begin(), picked.end());
    best = std::max(best, std::accumulate(picked.begin(), picked.end(), 0.0));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Whitespace-split word count.
inline std::size_t split_count(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

/// Random triple lists over a small vocabulary so that collisions and near
/// misses are common.
struct TripleGen {
  std::mt19937_64 rng;
  explicit TripleGen(std::uint64_t seed) : rng(seed) {}

  std::string word() {
    static const std::vector<std::string> kWords = {
        "AO 100A", "Form Name", "Category", "Criminal Forms", "Bail",
        "sheet",   "Tracking", "warrant",  "1.6",            "Base",
        "Ünïcode", "x",        "X",        "criminal forms.", "Surety"};
    return kWords[rng() % kWords.size()];
  }

  webtriples::Triple triple() { return {word(), word(), word()}; }

  webtriples::TripleList list(std::size_t max_len) {
    webtriples::TripleList out;
    const std::size_t n = rng() % (max_len + 1);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(triple());
    return out;
  }
};

}  // namespace oracle
