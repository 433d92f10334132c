#include "urgent/tda/resample.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <cmath>

namespace urgent::tda {

namespace {

void resample_row(const ScalarGrid& in, ScalarGrid& out, int factor, double sigma, int fine_row) {
  const double radius = 3.0 * sigma;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  const double cy = (fine_row + 0.5) / factor;
  const int r_lo = std::max(0, static_cast<int>(std::floor(cy - radius - 0.5)));
  const int r_hi = std::min(in.nrows - 1, static_cast<int>(std::ceil(cy + radius - 0.5)));
  for (int fc = 0; fc < out.ncols; ++fc) {
    const double cx = (fc + 0.5) / factor;
    const int c_lo = std::max(0, static_cast<int>(std::floor(cx - radius - 0.5)));
    const int c_hi = std::min(in.ncols - 1, static_cast<int>(std::ceil(cx + radius - 0.5)));
    double wsum = 0.0;
    double vsum = 0.0;
    for (int r = r_lo; r <= r_hi; ++r) {
      const double dy = cy - (r + 0.5);
      for (int c = c_lo; c <= c_hi; ++c) {
        const std::size_t i = in.index(c, r);
        if (in.is_nodata(i)) continue;
        const double dx = cx - (c + 0.5);
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        const double w = std::exp(-d2 * inv_two_sigma2);
        wsum += w;
        vsum += w * in.values[i];
      }
    }
    out.at(fc, fine_row) = wsum > 0.0 ? vsum / wsum : out.nodata;
  }
}

}  // namespace

ScalarGrid gaussian_resample(const ScalarGrid& grid, int factor, double sigma, Execution exec) {
  grid.validate();
  require(factor >= 1, "resampling factor must be at least 1");
  require(sigma > 0.0, "sigma must be positive");
  ScalarGrid out(grid.ncols * factor, grid.nrows * factor);
  out.x_origin = grid.x_origin;
  out.y_origin = grid.y_origin;
  out.cell_size_m = grid.cell_size_m / factor;
  out.nodata = grid.nodata;

  if (exec == Execution::Serial) {
    for (int r = 0; r < out.nrows; ++r) resample_row(grid, out, factor, sigma, r);
  } else {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < out.nrows; ++r) resample_row(grid, out, factor, sigma, r);
  }
  return out;
}

}  // namespace urgent::tda
