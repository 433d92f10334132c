#include <doctest.h>

#include "support/fixtures.hpp"
#include "urgent/error.hpp"
#include "urgent/model/ensemble.hpp"
#include "urgent/model/grid.hpp"
#include "urgent/model/surrogate.hpp"

#include <cmath>
#include <numeric>

using namespace urgent;
using namespace urgent::model;

TEST_CASE("thermal response") {
  CHECK(thermal_response(22.5) == 1.0);
  CHECK(thermal_response(10.0) == 0.0);
  CHECK(thermal_response(5.0) == 0.0);
  CHECK(thermal_response(40.0) == 0.0);
  for (double t = 10; t <= 35; t += 0.25) {
    const double f = thermal_response(t);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(f == doctest::Approx(thermal_response(45.0 - t)));  // symmetric about 22.5
  }
}

TEST_CASE("trailing mean") {
  std::vector<double> constant(12, 20.0), ramp(10);
  std::iota(ramp.begin(), ramp.end(), 0.0);
  for (std::size_t d = 0; d < constant.size(); ++d) CHECK(trailing_mean(constant, d, 7) == 20.0);
  CHECK(trailing_mean(ramp, 0, 7) == 0.0);
  CHECK(trailing_mean(ramp, 9, 7) == 6.0);
  CHECK(trailing_mean(ramp, 2, 7) == 1.0);
  CHECK_THROWS_AS(trailing_mean(ramp, 10, 7), Error);
}

TEST_CASE("carrying capacity") {
  CHECK(carrying_capacity(10, 5000, 5000, 10, 5000) == doctest::Approx(4125.0));
  CHECK(carrying_capacity(0, 0, 5000, 10, 5000) == doctest::Approx(500.0));
  CHECK(carrying_capacity(1e12, 1e12, 5000, 10, 5000) == doctest::Approx(10000.0).epsilon(1e-6));
}

TEST_CASE("abundance step and R0") {
  CHECK(step_abundance(100, 1000, 1.0, 0.2, 0.05, 0.0) == doctest::Approx(118.0));
  CHECK(step_abundance(1000, 1000, 1.0, 0.2, 0.05, 0.0) == 1000.0);
  CHECK(step_abundance(100, 1000, 0.0, 0.2, 0.05, 0.0) == doctest::Approx(95.0));
  CHECK(step_abundance(1e-9, 1000, 0.0, 0.2, 0.05, 0.005) == 0.005);
  CHECK(r0_field(500, 1000, 1.0, 2.0) == doctest::Approx(1.0));
  CHECK(r0_field(500, 0, 1.0, 2.0) == 0.0);
  CHECK(r0_field(500, 1000, 0.0, 2.0) == 0.0);
}

TEST_CASE("member sampling stays in range and depends only on (seed, member)") {
  const SurrogateConstants c;
  for (std::uint64_t m = 0; m < 500; ++m) {
    const auto p = sample_member(77, m, c);
    CHECK(p.r_m >= 0.1);
    CHECK(p.r_m <= 0.3);
    CHECK(p.k0 >= 3000);
    CHECK(p.k0 <= 7000);
    CHECK(p.beta >= 1.0);
    CHECK(p.beta <= 3.0);
  }
  const auto a = sample_member(77, 5), b = sample_member(77, 5), other = sample_member(78, 5);
  CHECK(a.k0 == b.k0);
  CHECK(a.k0 != other.k0);
}

namespace {

// Straight transcription of the model for a single cell, kept free of the
// library's helpers so it acts as an independent check.
std::vector<double> oracle_member(const ScenarioInputs& in, std::size_t cell, const MemberParams& p) {
  const SurrogateConstants c;
  const std::size_t n = in.n_days();
  const double h = in.human_density.values[cell];
  auto window_mean = [&](const std::vector<ScalarGrid>& s, std::size_t day, bool clamp) {
    const std::size_t first = day + 1 >= c.window ? day + 1 - c.window : 0;
    double sum = 0;
    for (std::size_t d = first; d <= day; ++d) sum += clamp ? std::max(0.0, s[d].values[cell]) : s[d].values[cell];
    return sum / static_cast<double>(day - first + 1);
  };
  auto cap = [&](double pbar) {
    return p.k0 * (0.1 + 0.9 * pbar / (pbar + 10.0)) * (1.0 + h / (h + 5000.0));
  };
  double m = 0.01 * cap(window_mean(in.precipitation, 0, true));
  std::vector<double> r0(n);
  for (std::size_t d = 0; d < n; ++d) {
    const double t = window_mean(in.temperature, d, false);
    const double f = std::max(0.0, 4.0 * (t - 10.0) * (35.0 - t) / 625.0);
    r0[d] = h <= 0 ? 0.0 : p.beta * f * m / std::max(h, 1.0);
    const double k = cap(window_mean(in.precipitation, d, true));
    m = std::max(1e-6 * p.k0, m + p.r_m * f * m * (1.0 - m / k) - 0.05 * (1.0 - f) * m);
  }
  return r0;
}

}  // namespace

TEST_CASE("a member matches the hand-written model") {
  const auto in = testing::warm_scenario(5, 4, 20);
  EnsembleConfig cfg{1, 1234, "aedes", "dengue", {}};
  for (int member : {0, 3, 17}) {
    const auto trace = run_member(in, cfg, member);
    for (std::size_t cell : {0UL, 7UL, 19UL}) {
      const auto expect = oracle_member(in, cell, trace.params);
      for (std::size_t d = 0; d < in.n_days(); ++d)
        CHECK(trace.r0[d].values[cell] == doctest::Approx(expect[d]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ensemble mean and stddev match a two-pass reduction over members") {
  const auto in = testing::warm_scenario(4, 3, 12);
  const EnsembleConfig cfg{25, 99, "", "", {}};
  const auto res = run_ensemble(in, cfg);
  std::vector<MemberTrace> traces;
  for (int m = 0; m < cfg.n_members; ++m) traces.push_back(run_member(in, cfg, m));
  for (std::size_t d = 0; d < in.n_days(); ++d)
    for (std::size_t cell = 0; cell < in.human_density.size(); ++cell) {
      double sum = 0;
      for (const auto& t : traces) sum += t.r0[d].values[cell];
      const double mean = sum / cfg.n_members;
      double ss = 0;
      for (const auto& t : traces) ss += std::pow(t.r0[d].values[cell] - mean, 2);
      CHECK(res.mean[d].values[cell] == doctest::Approx(mean).epsilon(1e-10));
      CHECK(res.stddev[d].values[cell] ==
            doctest::Approx(std::sqrt(ss / (cfg.n_members - 1))).epsilon(1e-8));
    }
}

TEST_CASE("single member has zero spread") {
  const auto res = run_ensemble(testing::warm_scenario(3, 3, 5), {1, 5, "", "", {}});
  for (const auto& g : res.stddev)
    for (double v : g.values) CHECK(v == 0.0);
  CHECK(res.fidelity == 1);
}

TEST_CASE("ensemble is deterministic and both paths agree bit for bit") {
  const auto in = testing::warm_scenario(9, 7, 15);
  const EnsembleConfig cfg{40, 2024, "", "", {}};
  const auto a = run_ensemble(in, cfg, Execution::Parallel);
  const auto b = run_ensemble(in, cfg, Execution::Parallel);
  const auto s = run_ensemble(in, cfg, Execution::Serial);
  CHECK(a.mean == b.mean);
  CHECK(a.stddev == b.stddev);
  CHECK(a.mean == s.mean);
  CHECK(a.stddev == s.stddev);
}

TEST_CASE("prefix members are shared across fidelities") {
  const auto in = testing::warm_scenario(4, 4, 10);
  for (int m : {0, 4, 9}) {
    const auto coarse = run_member(in, {10, 7, "", "", {}}, m);
    const auto fine = run_member(in, {3000, 7, "", "", {}}, m);
    CHECK(coarse.r0 == fine.r0);
  }
}

TEST_CASE("cold scenario drives R0 to zero") {
  auto in = testing::warm_scenario(3, 3, 30);
  for (auto& g : in.temperature) std::fill(g.values.begin(), g.values.end(), 5.0);
  const auto res = run_ensemble(in, {20, 1, "", "", {}});
  for (double v : res.mean.back().values) CHECK(v == 0.0);
}

TEST_CASE("nodata in any input masks the cell on every day") {
  auto in = testing::warm_scenario(4, 4, 6);
  in.temperature[3].values[5] = in.temperature[3].nodata;
  in.human_density.values[10] = in.human_density.nodata;
  const auto res = run_ensemble(in, {5, 1, "", "", {}});
  for (std::size_t d = 0; d < 6; ++d) {
    CHECK(res.mean[d].is_nodata(5));
    CHECK(res.stddev[d].is_nodata(10));
    CHECK_FALSE(res.mean[d].is_nodata(6));
  }
}

TEST_CASE("abundance stays between the floor and twice the largest capacity") {
  const auto in = testing::warm_scenario(6, 5, 40);
  const SurrogateConstants c;
  for (int member = 0; member < 20; ++member) {
    const auto t = run_member(in, {1, 31, "", "", {}}, member);
    const double max_k = 2.0 * t.params.k0;  // capacity asymptote
    for (std::size_t d = 0; d < in.n_days(); ++d)
      for (std::size_t i = 0; i < in.human_density.size(); ++i) {
        CHECK(t.abundance[d].values[i] >= c.floor_fraction * t.params.k0);
        CHECK(t.abundance[d].values[i] <= 2.0 * max_k);
        CHECK(t.r0[d].values[i] >= 0.0);
      }
  }
}

TEST_CASE("mismatched inputs are a validation error") {
  auto in = testing::warm_scenario(4, 4, 3);
  in.precipitation.pop_back();
  CHECK_THROWS_AS(run_ensemble(in, {1, 1, "", "", {}}), Error);
  auto in2 = testing::warm_scenario(4, 4, 3);
  in2.gdp = ScalarGrid(3, 4, 1.0);
  CHECK_THROWS_AS(run_ensemble(in2, {1, 1, "", "", {}}), Error);
}

TEST_CASE("ASCII grids round-trip exactly") {
  ScalarGrid g(3, 2);
  g.x_origin = 500000.25;
  g.y_origin = 4640000;
  g.cell_size_m = 250;
  g.values = {0.1, 1.0 / 3.0, -9999, 1e-300, 12345.678, -0.0};
  const std::string text = to_ascii_grid(g);
  CHECK(text.rfind("ncols 3\nnrows 2\nxllcorner ", 0) == 0);
  CHECK(text.find("NODATA_value -9999\n") != std::string::npos);
  const auto back = parse_ascii_grid(text);
  CHECK(back == g);
  CHECK(to_ascii_grid(back) == text);

  const std::vector<ScalarGrid> series{g, g};
  CHECK(parse_ascii_series(to_ascii_series(series)) == series);
  CHECK_THROWS_AS(parse_ascii_grid("ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -1\n1\n"),
                  Error);
  CHECK_THROWS_AS(parse_ascii_grid("ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -1\nabc\n"),
                  Error);
}

TEST_CASE("binary series round-trip") {
  testing::TempDir dir("grid");
  const auto in = testing::warm_scenario(5, 3, 4, 100.0, 200.0);
  write_binary_series(dir / "t.bin", in.temperature);
  CHECK(read_binary_series(dir / "t.bin") == in.temperature);
  write_ascii_series(dir / "t.asc", in.temperature);
  CHECK(read_ascii_series(dir / "t.asc") == in.temperature);
}

TEST_CASE("cropping keeps the georeference") {
  ScalarGrid g(4, 3);
  g.x_origin = 1000;
  g.y_origin = 2000;
  g.cell_size_m = 10;
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = static_cast<double>(i);
  const auto c = crop_grid(g, 1, 0, 2, 2);
  CHECK(c.x_origin == 1010);
  CHECK(c.y_origin == 2010);
  CHECK(c.values == std::vector<double>{1, 2, 5, 6});
  CHECK_THROWS_AS(crop_grid(g, 3, 0, 2, 1), Error);
}
