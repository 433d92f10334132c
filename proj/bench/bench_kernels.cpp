// Serial reference against the OpenMP path for the two data-parallel kernels.
#include "urgent/model/ensemble.hpp"
#include "urgent/tda/resample.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace urgent;

namespace {

model::ScenarioInputs scenario(int side, int days) {
  model::ScenarioInputs in;
  for (int d = 0; d < days; ++d) {
    model::ScalarGrid t(side, side), p(side, side);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        t.at(c, r) = 20.0 + 5.0 * std::sin(0.2 * c + 0.1 * d);
        p.at(c, r) = 3.0 + 2.0 * std::cos(0.3 * r);
      }
    in.temperature.push_back(t);
    in.precipitation.push_back(p);
  }
  in.human_density = model::ScalarGrid(side, side, 1500.0);
  in.gdp = model::ScalarGrid(side, side, 1.0);
  return in;
}

void ensemble(benchmark::State& state, model::Execution exec) {
  const auto in = scenario(static_cast<int>(state.range(0)), 30);
  const model::EnsembleConfig cfg{static_cast<int>(state.range(1)), 1, "", "", {}};
  for (auto _ : state) benchmark::DoNotOptimize(model::run_ensemble(in, cfg, exec));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * 30 * state.range(1));
}

void resample(benchmark::State& state, model::Execution exec) {
  const int side = static_cast<int>(state.range(0));
  model::ScalarGrid g(side, side);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = std::sin(0.01 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(tda::gaussian_resample(g, 4, 1.0, exec));
  state.SetItemsProcessed(state.iterations() * side * side * 16);
}

}  // namespace

BENCHMARK_CAPTURE(ensemble, serial, model::Execution::Serial)->Args({32, 100})->Args({64, 300})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(ensemble, parallel, model::Execution::Parallel)->Args({32, 100})->Args({64, 300})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(resample, serial, model::Execution::Serial)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(resample, parallel, model::Execution::Parallel)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
