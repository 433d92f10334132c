#pragma once

#include "urgent/model/grid.hpp"
#include "urgent/model/surrogate.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace urgent::model {

struct ScenarioInputs {
  std::vector<ScalarGrid> temperature;    // degC, one grid per day
  std::vector<ScalarGrid> precipitation;  // mm, one grid per day
  ScalarGrid human_density;               // persons per cell
  ScalarGrid gdp;                         // index

  std::size_t n_days() const { return temperature.size(); }
  // Throws Validation on dimension mismatch or series length mismatch.
  void validate() const;
};

struct EnsembleConfig {
  int n_members = 1;
  std::uint64_t scenario_seed = 0;
  std::string species;
  std::string disease;
  SurrogateConstants constants;
};

struct R0Result {
  std::vector<ScalarGrid> mean;    // per day
  std::vector<ScalarGrid> stddev;  // per day, sample standard deviation (0 for one member)
  int fidelity = 0;
  std::string scenario_id;
};

// One member's daily trajectories, for inspection and tests.
struct MemberTrace {
  MemberParams params;
  std::vector<ScalarGrid> abundance;  // M at the start of each day
  std::vector<ScalarGrid> r0;
};

enum class Execution { Serial, Parallel };

/// Runs the ensemble. Both execution paths accumulate members in index order
/// for every (cell, day), so they agree bit for bit; Parallel splits cells
/// across OpenMP threads, Serial is the member-outer reference loop.
R0Result run_ensemble(const ScenarioInputs& inputs, const EnsembleConfig& cfg,
                      Execution exec = Execution::Parallel);

MemberTrace run_member(const ScenarioInputs& inputs, const EnsembleConfig& cfg, int member);

// Cuts a sub-rectangle out of every input grid (used for tiling).
ScenarioInputs crop_inputs(const ScenarioInputs& inputs, int col0, int row0, int ncols, int nrows);
ScalarGrid crop_grid(const ScalarGrid& grid, int col0, int row0, int ncols, int nrows);

}  // namespace urgent::model
