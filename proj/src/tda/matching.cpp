#include "urgent/tda/matching.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <limits>

namespace urgent::tda {

double diagonal_cost(const PersistencePair& p) {
  const double d = p.birth - p.death;
  return 0.5 * d * d;
}

PersistencePair diagonal_projection(const PersistencePair& p) {
  const double mid = 0.5 * (p.birth + p.death);
  return PersistencePair{mid, mid, kNoCell, false};
}

namespace {

double sq_dist(const PersistencePair& a, const PersistencePair& b) {
  const double db = a.birth - b.birth;
  const double dd = a.death - b.death;
  return db * db + dd * dd;
}

}  // namespace

std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  for (const auto& row : cost) require(row.size() == n, "assignment matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Shortest augmenting path with row/column potentials, 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = owner[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double cur = cost[r0 - 1][col - 1] - u[r0] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= n; ++col) {
        if (used[col]) {
          u[owner[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t col = 1; col <= n; ++col) row_to_col[owner[col] - 1] = col - 1;
  return row_to_col;
}

Matching match_diagrams(const std::vector<PersistencePair>& a,
                        const std::vector<PersistencePair>& b) {
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  Matching m;
  m.a_to_b.assign(na, std::nullopt);
  m.b_to_a.assign(nb, std::nullopt);
  const std::size_t n = na + nb;
  if (n == 0) return m;

  // Rows: a points then diagonal slots for b. Columns: b points then diagonal
  // slots for a. Diagonal slots are interchangeable, so every a->diag entry
  // in a row shares the same cost.
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) cost[i][j] = sq_dist(a[i], b[j]);
    for (std::size_t k = 0; k < na; ++k) cost[i][nb + k] = diagonal_cost(a[i]);
  }
  for (std::size_t l = 0; l < nb; ++l)
    for (std::size_t j = 0; j < nb; ++j) cost[na + l][j] = diagonal_cost(b[j]);

  const auto assign = solve_assignment(cost);
  for (std::size_t i = 0; i < na; ++i) {
    if (assign[i] < nb) {
      m.a_to_b[i] = assign[i];
      m.b_to_a[assign[i]] = i;
      m.cost += cost[i][assign[i]];
    } else {
      m.cost += diagonal_cost(a[i]);
    }
  }
  for (std::size_t j = 0; j < nb; ++j)
    if (!m.b_to_a[j]) m.cost += diagonal_cost(b[j]);
  return m;
}

double diagram_matching_cost(const PersistenceDiagram& a, const PersistenceDiagram& b) {
  return match_diagrams(a.pairs, b.pairs).cost;
}

BarycentreResult barycentre(const std::vector<PersistenceDiagram>& diagrams) {
  require(!diagrams.empty(), "barycentre needs at least one diagram");
  const std::size_t n = diagrams.size();

  std::vector<std::size_t> sizes;
  for (const auto& d : diagrams) sizes.push_back(d.pairs.size());
  std::vector<std::size_t> sorted = sizes;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t median = sorted[(n - 1) / 2];
  const std::size_t init = static_cast<std::size_t>(
      std::find(sizes.begin(), sizes.end(), median) - sizes.begin());

  std::vector<PersistencePair> candidate = diagrams[init].pairs;
  for (auto& p : candidate) p.cell = kNoCell;

  auto total_cost = [&diagrams](const std::vector<PersistencePair>& c) {
    double sum = 0.0;
    for (const auto& d : diagrams) sum += match_diagrams(c, d.pairs).cost;
    return sum;
  };

  BarycentreResult result;
  double previous = total_cost(candidate);
  while (result.iterations < 100) {
    ++result.iterations;
    const std::size_t k = candidate.size();
    std::vector<double> shift_birth(k, 0.0), shift_death(k, 0.0);
    std::vector<std::size_t> to_diagonal(k, 0);
    for (const auto& d : diagrams) {
      const Matching m = match_diagrams(candidate, d.pairs);
      for (std::size_t i = 0; i < k; ++i) {
        const PersistencePair partner =
            m.a_to_b[i] ? d.pairs[*m.a_to_b[i]] : diagonal_projection(candidate[i]);
        if (!m.a_to_b[i]) ++to_diagonal[i];
        shift_birth[i] += partner.birth - candidate[i].birth;
        shift_death[i] += partner.death - candidate[i].death;
      }
    }
    std::vector<PersistencePair> next;
    for (std::size_t i = 0; i < k; ++i) {
      if (2 * to_diagonal[i] > n) continue;
      PersistencePair p = candidate[i];
      p.birth += shift_birth[i] / static_cast<double>(n);
      p.death += shift_death[i] / static_cast<double>(n);
      next.push_back(p);
    }
    const double cost = total_cost(next);
    candidate = std::move(next);
    const bool converged = previous - cost < 1e-9;
    previous = cost;
    if (converged) break;
  }

  result.cost = previous;
  result.diagram.pairs = std::move(candidate);
  canonical_sort(result.diagram.pairs);
  result.diagram.grid = diagrams.front().grid;
  result.diagram.time_label = "barycentre";
  return result;
}

}  // namespace urgent::tda
