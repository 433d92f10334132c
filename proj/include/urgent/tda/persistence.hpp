#pragma once

#include "urgent/model/grid.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace urgent::tda {

using model::ScalarGrid;

// Cell index carried by pairs that do not come from a grid vertex (barycentres).
inline constexpr std::int64_t kNoCell = -1;

struct PersistencePair {
  double birth = 0.0;  // value at the maximum
  double death = 0.0;  // value at the merge saddle (component minimum if essential)
  std::int64_t cell = kNoCell;
  bool essential = false;

  double persistence() const { return birth - death; }
  bool operator==(const PersistencePair&) const = default;
};

struct GridMeta {
  int ncols = 0;
  int nrows = 0;
  double x_origin = 0.0;
  double y_origin = 0.0;
  double cell_size_m = 0.0;

  bool operator==(const GridMeta&) const = default;
};

GridMeta meta_of(const ScalarGrid& grid);

struct PersistenceDiagram {
  std::vector<PersistencePair> pairs;  // canonical order, see canonical_sort
  GridMeta grid;
  std::string time_label;
};

struct MaximaBar {
  int cell_x = -1;
  int cell_y = -1;  // row, 0 = north
  double value = 0.0;
  double persistence = 0.0;
};

// Persistence descending, then cell ascending (then birth descending).
void canonical_sort(std::vector<PersistencePair>& pairs);

/// Superlevel-set persistence of the maxima of `grid` over 4-connected
/// vertices. Vertices are ordered by value descending with the lower linear
/// index first on ties; when components merge the one with the lower peak
/// dies at the merge value. Each connected component of the (non-nodata)
/// domain leaves one essential pair whose death is that component's minimum.
/// Throws EmptyDomain if every cell is nodata.
PersistenceDiagram persistence_maxima(const ScalarGrid& grid, std::string time_label = {});

// Keeps pairs with persistence >= tau; essential pairs always stay.
PersistenceDiagram threshold_diagram(const PersistenceDiagram& diagram, double tau);

std::vector<MaximaBar> top_k_maxima(const PersistenceDiagram& diagram, std::size_t k);

nlohmann::json diagram_to_json(const PersistenceDiagram& diagram);
PersistenceDiagram diagram_from_json(const nlohmann::json& j);

}  // namespace urgent::tda
