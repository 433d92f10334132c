#include "urgent/model/ensemble.hpp"

#include "urgent/error.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace urgent::model {

void ScenarioInputs::validate() const {
  if (temperature.empty()) fail(ErrorCode::Validation, "scenario needs at least one day");
  if (precipitation.size() != temperature.size())
    fail(ErrorCode::Validation, "temperature has " + std::to_string(temperature.size()) +
                                    " days but precipitation has " +
                                    std::to_string(precipitation.size()));
  const auto& ref = human_density;
  ref.validate();
  auto check = [&ref](const ScalarGrid& g, const std::string& what) {
    g.validate();
    if (g.ncols != ref.ncols || g.nrows != ref.nrows)
      fail(ErrorCode::Validation, what + " is " + std::to_string(g.ncols) + "x" +
                                      std::to_string(g.nrows) + ", expected " +
                                      std::to_string(ref.ncols) + "x" + std::to_string(ref.nrows));
  };
  check(gdp, "gdp");
  for (std::size_t d = 0; d < temperature.size(); ++d) {
    check(temperature[d], "temperature day " + std::to_string(d));
    check(precipitation[d], "precipitation day " + std::to_string(d));
  }
}

namespace {

// Member-independent drivers, cell-major: [cell * n_days + day].
struct Drivers {
  std::size_t n_cells = 0;
  std::size_t n_days = 0;
  std::vector<double> suitability;
  std::vector<double> precip_mean;
  std::vector<double> humans;
  std::vector<double> capacity_mod;
  std::vector<char> nodata;
};

Drivers prepare(const ScenarioInputs& in, const SurrogateConstants& c) {
  Drivers d;
  d.n_cells = in.human_density.size();
  d.n_days = in.n_days();
  d.suitability.resize(d.n_cells * d.n_days);
  d.precip_mean.resize(d.n_cells * d.n_days);
  d.humans.resize(d.n_cells);
  d.capacity_mod.assign(d.n_cells, 1.0);
  d.nodata.assign(d.n_cells, 0);

  double gdp_max = 0.0;
  for (std::size_t i = 0; i < d.n_cells; ++i)
    if (!in.gdp.is_nodata(i)) gdp_max = std::max(gdp_max, in.gdp.values[i]);

  std::vector<double> temp(d.n_days), rain(d.n_days);
  for (std::size_t i = 0; i < d.n_cells; ++i) {
    bool missing = in.human_density.is_nodata(i) || in.gdp.is_nodata(i);
    for (std::size_t day = 0; day < d.n_days; ++day) {
      missing = missing || in.temperature[day].is_nodata(i) || in.precipitation[day].is_nodata(i);
      temp[day] = in.temperature[day].values[i];
      rain[day] = std::max(0.0, in.precipitation[day].values[i]);
    }
    d.nodata[i] = missing ? 1 : 0;
    if (missing) continue;
    d.humans[i] = std::max(0.0, in.human_density.values[i]);
    if (c.gdp_weight != 0.0 && gdp_max > 0.0)
      d.capacity_mod[i] = 1.0 + c.gdp_weight * (1.0 - in.gdp.values[i] / gdp_max);
    for (std::size_t day = 0; day < d.n_days; ++day) {
      d.suitability[i * d.n_days + day] =
          thermal_response(trailing_mean(temp, day, c.window), c.t_min, c.t_max);
      d.precip_mean[i * d.n_days + day] = trailing_mean(rain, day, c.window);
    }
  }
  return d;
}

// Daily R0 (and optionally abundance) for one member at one cell.
void simulate_cell(const Drivers& d, std::size_t cell, const MemberParams& p,
                   const SurrogateConstants& c, std::span<double> r0,
                   std::span<double> abundance = {}) {
  const double h = d.humans[cell];
  const double floor = c.floor_fraction * p.k0;
  const double* f = &d.suitability[cell * d.n_days];
  const double* rain = &d.precip_mean[cell * d.n_days];
  const double mod = d.capacity_mod[cell];
  double m = c.initial_fraction * carrying_capacity(rain[0], h, p.k0, c.p_half, c.h_half) * mod;
  for (std::size_t day = 0; day < d.n_days; ++day) {
    if (!abundance.empty()) abundance[day] = m;
    r0[day] = r0_field(m, h, f[day], p.beta);
    const double k = carrying_capacity(rain[day], h, p.k0, c.p_half, c.h_half) * mod;
    m = step_abundance(m, k, f[day], p.r_m, c.mu_m, floor);
  }
}

// Welford update; identical arithmetic in both execution paths.
inline void accumulate(double x, double count, double& mean, double& m2) {
  const double delta = x - mean;
  mean += delta / count;
  m2 += delta * (x - mean);
}

std::vector<ScalarGrid> blank_series(const ScenarioInputs& in) {
  ScalarGrid g = in.human_density;
  std::fill(g.values.begin(), g.values.end(), 0.0);
  return std::vector<ScalarGrid>(in.n_days(), g);
}

}  // namespace

R0Result run_ensemble(const ScenarioInputs& inputs, const EnsembleConfig& cfg, Execution exec) {
  inputs.validate();
  require(cfg.n_members >= 1, "ensemble needs at least one member");
  const auto& c = cfg.constants;
  const Drivers d = prepare(inputs, c);

  std::vector<MemberParams> params(static_cast<std::size_t>(cfg.n_members));
  for (int m = 0; m < cfg.n_members; ++m) params[m] = sample_member(cfg.scenario_seed, m, c);

  std::vector<double> mean(d.n_cells * d.n_days, 0.0);
  std::vector<double> m2(d.n_cells * d.n_days, 0.0);
  const auto n_cells = static_cast<std::ptrdiff_t>(d.n_cells);

  if (exec == Execution::Serial) {
    std::vector<double> r0(d.n_days);
    for (int m = 0; m < cfg.n_members; ++m) {
      const double count = m + 1;
      for (std::ptrdiff_t cell = 0; cell < n_cells; ++cell) {
        if (d.nodata[cell]) continue;
        simulate_cell(d, cell, params[m], c, r0);
        for (std::size_t day = 0; day < d.n_days; ++day)
          accumulate(r0[day], count, mean[cell * d.n_days + day], m2[cell * d.n_days + day]);
      }
    }
  } else {
#pragma omp parallel
    {
      std::vector<double> r0(d.n_days);
#pragma omp for schedule(static)
      for (std::ptrdiff_t cell = 0; cell < n_cells; ++cell) {
        if (d.nodata[cell]) continue;
        for (int m = 0; m < cfg.n_members; ++m) {
          const double count = m + 1;
          simulate_cell(d, cell, params[m], c, r0);
          for (std::size_t day = 0; day < d.n_days; ++day)
            accumulate(r0[day], count, mean[cell * d.n_days + day], m2[cell * d.n_days + day]);
        }
      }
    }
  }

  R0Result out;
  out.fidelity = cfg.n_members;
  out.mean = blank_series(inputs);
  out.stddev = blank_series(inputs);
  const double denom = cfg.n_members > 1 ? cfg.n_members - 1 : 1;
  for (std::size_t cell = 0; cell < d.n_cells; ++cell) {
    for (std::size_t day = 0; day < d.n_days; ++day) {
      if (d.nodata[cell]) {
        out.mean[day].values[cell] = out.mean[day].nodata;
        out.stddev[day].values[cell] = out.stddev[day].nodata;
        continue;
      }
      out.mean[day].values[cell] = mean[cell * d.n_days + day];
      out.stddev[day].values[cell] =
          cfg.n_members > 1 ? std::sqrt(m2[cell * d.n_days + day] / denom) : 0.0;
    }
  }
  return out;
}

MemberTrace run_member(const ScenarioInputs& inputs, const EnsembleConfig& cfg, int member) {
  inputs.validate();
  require(member >= 0, "member index must be non-negative");
  const auto& c = cfg.constants;
  const Drivers d = prepare(inputs, c);
  MemberTrace t;
  t.params = sample_member(cfg.scenario_seed, member, c);
  t.abundance = blank_series(inputs);
  t.r0 = blank_series(inputs);
  std::vector<double> r0(d.n_days), ab(d.n_days);
  for (std::size_t cell = 0; cell < d.n_cells; ++cell) {
    if (d.nodata[cell]) {
      for (std::size_t day = 0; day < d.n_days; ++day) {
        t.abundance[day].values[cell] = t.abundance[day].nodata;
        t.r0[day].values[cell] = t.r0[day].nodata;
      }
      continue;
    }
    simulate_cell(d, cell, t.params, c, r0, ab);
    for (std::size_t day = 0; day < d.n_days; ++day) {
      t.abundance[day].values[cell] = ab[day];
      t.r0[day].values[cell] = r0[day];
    }
  }
  return t;
}

ScalarGrid crop_grid(const ScalarGrid& g, int col0, int row0, int ncols, int nrows) {
  require(col0 >= 0 && row0 >= 0 && ncols > 0 && nrows > 0 && col0 + ncols <= g.ncols &&
              row0 + nrows <= g.nrows,
          "crop window outside grid");
  ScalarGrid out(ncols, nrows);
  out.cell_size_m = g.cell_size_m;
  out.nodata = g.nodata;
  out.x_origin = g.x_origin + col0 * g.cell_size_m;
  // Row 0 is north, so the lower-left corner moves up by the rows below the window.
  out.y_origin = g.y_origin + (g.nrows - (row0 + nrows)) * g.cell_size_m;
  for (int r = 0; r < nrows; ++r)
    for (int col = 0; col < ncols; ++col) out.at(col, r) = g.at(col0 + col, row0 + r);
  return out;
}

ScenarioInputs crop_inputs(const ScenarioInputs& in, int col0, int row0, int ncols, int nrows) {
  ScenarioInputs out;
  for (const auto& g : in.temperature) out.temperature.push_back(crop_grid(g, col0, row0, ncols, nrows));
  for (const auto& g : in.precipitation)
    out.precipitation.push_back(crop_grid(g, col0, row0, ncols, nrows));
  out.human_density = crop_grid(in.human_density, col0, row0, ncols, nrows);
  out.gdp = crop_grid(in.gdp, col0, row0, ncols, nrows);
  return out;
}

}  // namespace urgent::model
