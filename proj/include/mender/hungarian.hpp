#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mender/tensor.hpp"

namespace mender {

// Result of a minimum-cost assignment. row_to_col[r] is -1 for rows left
// unassigned (only possible when rows > cols).
struct Assignment {
  std::vector<int> row_to_col;
  double total_cost = 0.0;

  std::vector<int> col_to_row(std::size_t cols) const {
    std::vector<int> out(cols, -1);
    for (std::size_t r = 0; r < row_to_col.size(); ++r)
      if (row_to_col[r] >= 0) out[static_cast<std::size_t>(row_to_col[r])] = static_cast<int>(r);
    return out;
  }
};

namespace detail {

// Shortest augmenting path with potentials (Jonker-Volgenant style), O(n²m)
// for n ≤ m. Indices are 1-based internally.
inline std::vector<int> solve_rows_le_cols(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

}  // namespace detail

/// Minimum-total-cost one-to-one assignment. Rectangular inputs assign
/// min(rows, cols) pairs. Costs must be finite.
inline Assignment hungarian(const Matrix& cost) {
  if (!all_finite(cost)) throw std::invalid_argument("hungarian: non-finite cost");
  Assignment result;
  result.row_to_col.assign(cost.rows(), -1);
  if (cost.rows() == 0 || cost.cols() == 0) return result;
  if (cost.rows() <= cost.cols()) {
    result.row_to_col = detail::solve_rows_le_cols(cost);
  } else {
    const auto col_to_row = detail::solve_rows_le_cols(transpose(cost));
    for (std::size_t c = 0; c < col_to_row.size(); ++c)
      result.row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
  }
  for (std::size_t r = 0; r < result.row_to_col.size(); ++r)
    if (result.row_to_col[r] >= 0)
      result.total_cost += cost(r, static_cast<std::size_t>(result.row_to_col[r]));
  return result;
}

// Cost used to forbid a pair in gated matching problems.
inline constexpr double kForbiddenCost = 1e6;

struct GatedMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col)
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;
};

/// Hungarian over `cost` where pairs with allowed(r, c) == false may not be
/// matched. Forbidden pairs carry kForbiddenCost and are dropped afterwards.
template <class Allowed>
GatedMatch gated_hungarian(const Matrix& cost, Allowed&& allowed) {
  Matrix gated = cost;
  for (std::size_t r = 0; r < cost.rows(); ++r)
    for (std::size_t c = 0; c < cost.cols(); ++c)
      if (!allowed(r, c)) gated(r, c) = kForbiddenCost;
  const Assignment a = hungarian(gated);
  GatedMatch out;
  std::vector<char> col_used(cost.cols(), 0);
  for (std::size_t r = 0; r < cost.rows(); ++r) {
    const int c = a.row_to_col[r];
    if (c >= 0 && allowed(r, static_cast<std::size_t>(c))) {
      out.pairs.emplace_back(r, static_cast<std::size_t>(c));
      col_used[static_cast<std::size_t>(c)] = 1;
    } else {
      out.unmatched_rows.push_back(r);
    }
  }
  for (std::size_t c = 0; c < cost.cols(); ++c)
    if (!col_used[c]) out.unmatched_cols.push_back(c);
  return out;
}

}  // namespace mender
