#pragma once

#include "urgent/tda/persistence.hpp"

#include <optional>
#include <vector>

namespace urgent::tda {

// Squared distance from (birth, death) to its orthogonal projection on the diagonal.
double diagonal_cost(const PersistencePair& p);
PersistencePair diagonal_projection(const PersistencePair& p);

struct Matching {
  double cost = 0.0;
  std::vector<std::optional<std::size_t>> a_to_b;  // nullopt: matched to the diagonal
  std::vector<std::optional<std::size_t>> b_to_a;
};

/// Minimum total squared Euclidean cost over partial matchings between the
/// two point sets; unmatched points pay their diagonal cost. Solved exactly by
/// the Hungarian method on the (|a|+|b|)-square diagonally augmented matrix.
Matching match_diagrams(const std::vector<PersistencePair>& a,
                        const std::vector<PersistencePair>& b);

double diagram_matching_cost(const PersistenceDiagram& a, const PersistenceDiagram& b);

// Minimum-cost perfect assignment for a square cost matrix (row -> column).
std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost);

struct BarycentreResult {
  PersistenceDiagram diagram;
  std::size_t iterations = 0;
  double cost = 0.0;  // summed matching cost of the returned candidate
};

/// Fixed-initializer barycentre: starts from the first input of median
/// cardinality, then repeatedly moves every candidate point to the mean of its
/// partners (diagonal projections where unmatched) and drops points sent to
/// the diagonal by a strict majority, until the summed cost improves by less
/// than 1e-9 or 100 iterations. Output pairs carry kNoCell.
BarycentreResult barycentre(const std::vector<PersistenceDiagram>& diagrams);

}  // namespace urgent::tda
