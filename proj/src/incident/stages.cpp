#include "urgent/incident/stages.hpp"

#include "urgent/error.hpp"
#include "urgent/tda/resample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace urgent::incident {

void validate_ladder(const std::vector<int>& rungs) {
  if (rungs.empty()) fail(ErrorCode::Validation, "fidelity ladder is empty");
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    if (rungs[i] < 1) fail(ErrorCode::Validation, "ladder rungs must be >= 1 member");
    if (i > 0 && rungs[i] <= rungs[i - 1])
      fail(ErrorCode::Validation, "ladder rungs must be strictly increasing");
  }
}

namespace {

std::vector<std::pair<int, int>> split(int n, int parts) {
  std::vector<std::pair<int, int>> out;  // (start, length)
  const int base = n / parts;
  const int extra = n % parts;
  int start = 0;
  for (int i = 0; i < parts; ++i) {
    const int len = base + (i < extra ? 1 : 0);
    out.emplace_back(start, len);
    start += len;
  }
  return out;
}

std::string cell_text(int col, int row) {
  return "(" + std::to_string(col) + ", " + std::to_string(row) + ")";
}

// Offset of `coord` from `origin` in whole cells, or nullopt off-lattice.
std::optional<int> lattice_offset(double coord, double origin, double cell) {
  const double steps = (coord - origin) / cell;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-6) return std::nullopt;
  return static_cast<int>(rounded);
}

}  // namespace

std::vector<TileRect> plan_tiles(int ncols, int nrows, std::size_t threshold_cells) {
  require(ncols > 0 && nrows > 0, "region must have cells");
  require(threshold_cells > 0, "tile threshold must be positive");
  const auto cells = static_cast<std::size_t>(ncols) * static_cast<std::size_t>(nrows);
  if (cells <= threshold_cells) return {TileRect{0, 0, ncols, nrows}};
  const int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(threshold_cells))));
  const int tx = (ncols + side - 1) / side;
  const int ty = (nrows + side - 1) / side;
  std::vector<TileRect> tiles;
  for (const auto& [r0, rn] : split(nrows, ty))
    for (const auto& [c0, cn] : split(ncols, tx)) tiles.push_back(TileRect{c0, r0, cn, rn});
  return tiles;
}

std::vector<ScalarGrid> stitch_mosaic(const ScalarGrid& region,
                                      const std::vector<std::vector<ScalarGrid>>& tiles) {
  if (tiles.empty()) fail(ErrorCode::Validation, "mosaic needs at least one tile");
  const std::size_t n_days = tiles.front().size();
  if (n_days == 0) fail(ErrorCode::Validation, "tile series is empty");
  const double cs = region.cell_size_m;

  std::vector<ScalarGrid> out(n_days, region);
  for (auto& g : out) std::fill(g.values.begin(), g.values.end(), region.nodata);
  std::vector<int> owner(region.size(), -1);

  const double region_top = region.y_origin + region.nrows * cs;
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto& series = tiles[t];
    if (series.size() != n_days)
      fail(ErrorCode::Validation, "tile " + std::to_string(t) + " has " +
                                      std::to_string(series.size()) + " days, expected " +
                                      std::to_string(n_days));
    const ScalarGrid& first = series.front();
    if (std::abs(first.cell_size_m - cs) > 1e-9 * cs)
      fail(ErrorCode::Validation, "tile " + std::to_string(t) + " cell size differs from region");
    const auto col0 = lattice_offset(first.x_origin, region.x_origin, cs);
    const auto row0 = lattice_offset(region_top, first.y_origin + first.nrows * cs, cs);
    if (!col0 || !row0)
      fail(ErrorCode::Validation, "tile " + std::to_string(t) + " is off the region lattice");
    if (*col0 < 0 || *row0 < 0 || *col0 + first.ncols > region.ncols ||
        *row0 + first.nrows > region.nrows)
      fail(ErrorCode::Validation, "tile " + std::to_string(t) + " at " + cell_text(*col0, *row0) +
                                      " extends outside the region");
    for (const auto& day : series)
      if (!day.same_geometry(first))
        fail(ErrorCode::Validation, "tile " + std::to_string(t) + " changes geometry over time");

    for (int r = 0; r < first.nrows; ++r) {
      for (int c = 0; c < first.ncols; ++c) {
        const std::size_t dst = region.index(*col0 + c, *row0 + r);
        if (owner[dst] >= 0)
          fail(ErrorCode::Validation, "tiles " + std::to_string(owner[dst]) + " and " +
                                          std::to_string(t) + " overlap at cell " +
                                          cell_text(*col0 + c, *row0 + r));
        owner[dst] = static_cast<int>(t);
        for (std::size_t d = 0; d < n_days; ++d) {
          const double v = series[d].at(c, r);
          out[d].values[dst] = v == series[d].nodata ? region.nodata : v;
        }
      }
    }
  }
  for (std::size_t i = 0; i < owner.size(); ++i)
    if (owner[i] < 0) {
      const int col = static_cast<int>(i % static_cast<std::size_t>(region.ncols));
      const int row = static_cast<int>(i / static_cast<std::size_t>(region.ncols));
      fail(ErrorCode::Validation, "no tile covers cell " + cell_text(col, row));
    }
  return out;
}

std::string_view to_string(Bucketing b) {
  switch (b) {
    case Bucketing::Day: return "day";
    case Bucketing::Week: return "week";
    case Bucketing::Month: return "month";
  }
  return "?";
}

Bucketing bucketing_from_string(std::string_view s) {
  if (s == "day") return Bucketing::Day;
  if (s == "week") return Bucketing::Week;
  if (s == "month") return Bucketing::Month;
  fail(ErrorCode::Validation, "unknown time bucket '" + std::string(s) + "'");
}

int bucket_days(Bucketing b) {
  switch (b) {
    case Bucketing::Day: return 1;
    case Bucketing::Week: return 7;
    case Bucketing::Month: return 30;
  }
  return 1;
}

std::vector<TimeBucket> time_buckets(std::size_t n_days, Bucketing b) {
  const auto width = static_cast<std::size_t>(bucket_days(b));
  std::vector<TimeBucket> out;
  for (std::size_t first = 0; first < n_days; first += width) {
    const std::size_t last = std::min(n_days, first + width) - 1;
    out.push_back({first, last, "d" + std::to_string(first) + "-" + std::to_string(last)});
  }
  return out;
}

ScalarGrid bucket_mean(const std::vector<ScalarGrid>& days, const TimeBucket& bucket) {
  require(bucket.last_day < days.size() && bucket.first_day <= bucket.last_day,
          "bucket outside the series");
  ScalarGrid out = days[bucket.first_day];
  const double len = static_cast<double>(bucket.last_day - bucket.first_day + 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double sum = 0.0;
    bool hole = false;
    for (std::size_t d = bucket.first_day; d <= bucket.last_day && !hole; ++d) {
      if (days[d].is_nodata(i)) hole = true;
      else sum += days[d].values[i];
    }
    out.values[i] = hole ? out.nodata : sum / len;
  }
  return out;
}

TopoBundle topo_bundle(const std::vector<ScalarGrid>& mosaic, const TopoOptions& options) {
  require(!mosaic.empty(), "mosaic has no days");
  require(options.tau_fraction >= 0.0, "tau fraction must be non-negative");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& day : mosaic)
    for (std::size_t i = 0; i < day.size(); ++i)
      if (!day.is_nodata(i)) {
        lo = std::min(lo, day.values[i]);
        hi = std::max(hi, day.values[i]);
      }
  if (lo > hi) fail(ErrorCode::EmptyDomain, "mosaic holds no data cells");

  TopoBundle bundle;
  bundle.options = options;
  bundle.tau = options.tau_fraction * (hi - lo);
  for (const auto& bucket : time_buckets(mosaic.size(), options.bucketing)) {
    const ScalarGrid fine = tda::gaussian_resample(bucket_mean(mosaic, bucket),
                                                   options.resample_factor, options.sigma_cells);
    bundle.diagrams.push_back(
        tda::threshold_diagram(tda::persistence_maxima(fine, bucket.label), bundle.tau));
  }
  bundle.barycentre = tda::barycentre(bundle.diagrams);
  return bundle;
}

nlohmann::json bundle_to_json(const TopoBundle& bundle) {
  nlohmann::json diagrams = nlohmann::json::array();
  for (const auto& d : bundle.diagrams) diagrams.push_back(tda::diagram_to_json(d));
  nlohmann::json bary = tda::diagram_to_json(bundle.barycentre.diagram);
  bary["iterations"] = bundle.barycentre.iterations;
  bary["cost"] = bundle.barycentre.cost;
  return {{"bucketing", to_string(bundle.options.bucketing)},
          {"tau", bundle.tau},
          {"tau_fraction", bundle.options.tau_fraction},
          {"resample_factor", bundle.options.resample_factor},
          {"sigma_cells", bundle.options.sigma_cells},
          {"diagrams", diagrams},
          {"barycentre", bary}};
}

Supersession supersede(std::optional<int> visible, int completed) {
  if (!visible) return Supersession::First;
  return completed > *visible ? Supersession::Superseded : Supersession::Discarded;
}

}  // namespace urgent::incident
