#pragma once

#include <limits>
#include <vector>

#include "omg/error.hpp"

namespace omg {

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// cost is row-major [rows, cols]; returns the column chosen for each row.
inline std::vector<int> hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (rows > cols) throw DimensionError("hungarian: more rows than columns");
  if (cost.size() != rows * cols) throw DimensionError("hungarian: cost size mismatch");
  if (rows == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = rows, m = cols;
  // 1-based potentials; p[j] is the row assigned to column j
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
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) u[p[j]] += delta, v[j] -= delta;
        else minv[j] -= delta;
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j]) out[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

}  // namespace omg
