#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace urgent::model {

inline constexpr double kDefaultCellSizeM = 250.0;
inline constexpr double kDefaultNodata = -9999.0;

/// Row-major 2D field. Row 0 is the northernmost row; (x_origin, y_origin)
/// is the lower-left corner as in the ASCII grid header.
struct ScalarGrid {
  int ncols = 0;
  int nrows = 0;
  double x_origin = 0.0;
  double y_origin = 0.0;
  double cell_size_m = kDefaultCellSizeM;
  double nodata = kDefaultNodata;
  std::vector<double> values;

  ScalarGrid() = default;
  ScalarGrid(int cols, int rows, double fill = 0.0);

  std::size_t size() const { return values.size(); }
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(ncols) +
           static_cast<std::size_t>(col);
  }
  double& at(int col, int row) { return values[index(col, row)]; }
  double at(int col, int row) const { return values[index(col, row)]; }
  bool is_nodata(std::size_t i) const { return values[i] == nodata; }

  // Same dimensions, origin and cell size.
  bool same_geometry(const ScalarGrid& other) const;
  // Throws Validation on inconsistent dimensions or cell size.
  void validate() const;

  bool operator==(const ScalarGrid&) const = default;
};

// Shortest round-trip decimal form, as written in grid files.
std::string format_value(double v);

// ESRI-style ASCII grid: six header lines then nrows lines of ncols values.
std::string to_ascii_grid(const ScalarGrid& grid);
ScalarGrid parse_ascii_grid(std::string_view text);

// A series is consecutive ASCII grids in one file (one per day).
std::string to_ascii_series(std::span<const ScalarGrid> grids);
std::vector<ScalarGrid> parse_ascii_series(std::string_view text);

void write_ascii_grid(const std::filesystem::path& path, const ScalarGrid& grid);
ScalarGrid read_ascii_grid(const std::filesystem::path& path);
void write_ascii_series(const std::filesystem::path& path, std::span<const ScalarGrid> grids);
std::vector<ScalarGrid> read_ascii_series(const std::filesystem::path& path);

// Compact binary series: one JSON header line, then little-endian doubles.
void write_binary_series(const std::filesystem::path& path, std::span<const ScalarGrid> grids);
std::vector<ScalarGrid> read_binary_series(const std::filesystem::path& path);

}  // namespace urgent::model
