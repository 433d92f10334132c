#pragma once

#include "urgent/model/grid.hpp"
#include "urgent/tda/matching.hpp"
#include "urgent/tda/persistence.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace urgent::incident {

using model::ScalarGrid;

inline constexpr std::size_t kDefaultTileThresholdCells = 250'000;

// Member counts, strictly increasing. Throws Validation otherwise.
void validate_ladder(const std::vector<int>& rungs);
inline const std::vector<int> kDefaultLadder{10, 1000, 3000};

struct TileRect {
  int col0 = 0;
  int row0 = 0;  // 0 = north
  int ncols = 0;
  int nrows = 0;
  bool operator==(const TileRect&) const = default;
};

// One tile when the region is at or below the threshold; otherwise a grid of
// near-square tiles, each holding at most `threshold_cells` cells.
std::vector<TileRect> plan_tiles(int ncols, int nrows,
                                 std::size_t threshold_cells = kDefaultTileThresholdCells);

/// Places georeferenced tile series into the region. Tiles must sit on the
/// region's cell lattice, lie inside it, not overlap, and together cover
/// every cell; any violation throws Validation naming the cell coordinates.
std::vector<ScalarGrid> stitch_mosaic(const ScalarGrid& region,
                                      const std::vector<std::vector<ScalarGrid>>& tiles);

enum class Bucketing { Day, Week, Month };

std::string_view to_string(Bucketing b);
Bucketing bucketing_from_string(std::string_view s);
int bucket_days(Bucketing b);

struct TimeBucket {
  std::size_t first_day = 0;
  std::size_t last_day = 0;  // inclusive
  std::string label;
};

// Consecutive buckets; the last one may be shorter.
std::vector<TimeBucket> time_buckets(std::size_t n_days, Bucketing b);

// Cell-wise mean over a day range; nodata anywhere in the range stays nodata.
ScalarGrid bucket_mean(const std::vector<ScalarGrid>& days, const TimeBucket& bucket);

struct TopoOptions {
  Bucketing bucketing = Bucketing::Week;
  double tau_fraction = 0.05;  // of the mosaic's value range
  int resample_factor = 2;
  double sigma_cells = 1.0;
};

struct TopoBundle {
  std::vector<tda::PersistenceDiagram> diagrams;  // one per bucket
  tda::BarycentreResult barycentre;
  double tau = 0.0;
  TopoOptions options;
};

// Per bucket: mean field -> gaussian_resample -> persistence_maxima ->
// threshold; then the barycentre of the bucket diagrams.
TopoBundle topo_bundle(const std::vector<ScalarGrid>& mosaic, const TopoOptions& options);
nlohmann::json bundle_to_json(const TopoBundle& bundle);

enum class Supersession { First, Superseded, Discarded };

// Decides what a completed rung does to the visible fidelity. Never lowers it.
Supersession supersede(std::optional<int> visible, int completed);

}  // namespace urgent::incident
