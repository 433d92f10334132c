#pragma once

#include "urgent/model/ensemble.hpp"
#include "urgent/model/grid.hpp"

namespace urgent::tda {

using model::Execution;
using model::ScalarGrid;

/// Upsamples `grid` by an integer factor with a normalized Gaussian kernel.
/// Each fine cell centre takes the weighted mean of the input cell centres
/// within 3 sigma (sigma and distances in input-cell units). Nodata inputs do
/// not contribute; a fine cell with no contributor is nodata.
ScalarGrid gaussian_resample(const ScalarGrid& grid, int factor, double sigma_cells = 1.0,
                             Execution exec = Execution::Parallel);

}  // namespace urgent::tda
