#pragma once

// Maximum-weight one-to-one assignment (Kuhn-Munkres) for rectangular
// matrices. The matrix is padded to square with zero-weight dummies and
// solved as a min-cost problem with the O(n^3) potential-based variant.

#include <algorithm>
#include <cassert>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace webtriples {

/// Dense row-major matrix of weights.
template <typename T = double>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols_, cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

struct Assignment {
  /// (row, col) pairs sorted by row.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  /// Sum of the matched weights, accumulated in row order.
  double total = 0.0;
};

/// Throws std::logic_error when a row or column index appears twice.
inline void check_one_to_one(const Assignment& a, std::size_t rows,
                             std::size_t cols) {
  std::vector<bool> row_used(rows), col_used(cols);
  for (auto [r, c] : a.pairs) {
    if (r >= rows || c >= cols || row_used[r] || col_used[c]) {
      throw std::logic_error("assignment is not one-to-one");
    }
    row_used[r] = col_used[c] = true;
  }
}

/// Returns a matching of size min(rows, cols) with maximal total weight.
template <typename T>
Assignment munkres_assign(const Matrix<T>& weights) {
  Assignment result;
  const std::size_t rows = weights.rows();
  const std::size_t cols = weights.cols();
  if (rows == 0 || cols == 0) return result;

  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t r, std::size_t c) -> double {
    // 1-based; dummies weigh zero.
    if (r > rows || c > cols) return 0.0;
    return -static_cast<double>(weights(r - 1, c - 1));
  };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0);  // match[col] = row
  std::vector<std::size_t> way(n + 1, 0);

  for (std::size_t r = 1; r <= n; ++r) {
    match[0] = r;
    std::size_t col0 = 0;
    std::vector<double> min_slack(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t row0 = match[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        double slack = cost(row0, c) - u[row0] - v[c];
        if (slack < min_slack[c]) {
          min_slack[c] = slack;
          way[c] = col0;
        }
        if (min_slack[c] < delta) {
          delta = min_slack[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          min_slack[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> row_to_col(rows, n);
  for (std::size_t c = 1; c <= n; ++c) {
    const std::size_t r = match[c];
    if (r >= 1 && r <= rows && c <= cols) row_to_col[r - 1] = c - 1;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_to_col[r] == n) continue;
    result.pairs.emplace_back(r, row_to_col[r]);
    result.total += static_cast<double>(weights(r, row_to_col[r]));
  }
  // Padding is on one side only, so every real row (or every real
  // column) lands on a real partner.
  check_one_to_one(result, rows, cols);
  assert(result.pairs.size() == std::min(rows, cols));
  return result;
}

}  // namespace webtriples
