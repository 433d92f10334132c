#include "urgent/error.hpp"
#include "urgent/federation/federation.hpp"
#include "urgent/federation/matrix.hpp"
#include "urgent/incident/service.hpp"
#include "urgent/model/ensemble.hpp"
#include "urgent/model/grid.hpp"
#include "urgent/tda/persistence.hpp"
#include "urgent/tda/resample.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace urgent;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

// Reads "nodes,runtime_s,queue_wait_s" rows (header optional) into records.
std::vector<fed::SchedulingRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::NotFound, "cannot open " + path);
  std::vector<fed::SchedulingRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    std::stringstream row(line);
    std::string a, b, c;
    std::getline(row, a, ',');
    std::getline(row, b, ',');
    std::getline(row, c, ',');
    fed::SchedulingRecord r;
    r.job_id = "row-" + std::to_string(out.size() + 1);
    r.nodes = std::stoi(a);
    r.runtime_s = std::stod(b);
    r.queue_wait_s = std::stod(c);
    r.coefficient = fed::scheduling_coefficient(r.runtime_s, r.queue_wait_s);
    out.push_back(r);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urgent computing workflow service and tools"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  // serve
  auto* serve = app.add_subcommand("serve", "run the incident service over HTTP");
  std::string root = "urgent-data", host = "127.0.0.1", machines_file, mode = "live";
  int port = 8080;
  double time_scale = 1.0;
  serve->add_option("--root", root, "data directory");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--machines", machines_file, "machine configuration (JSON or YAML)");
  serve->add_option("--mode", mode, "live or virtual")->check(CLI::IsMember({"live", "virtual"}));
  serve->add_option("--time-scale", time_scale, "virtual seconds per real second in live mode");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run an R0 ensemble on ASCII inputs");
  std::string temperature, precipitation, density, gdp, mean_out, stddev_out;
  int members = 10;
  std::uint64_t seed = 1;
  bool serial = false;
  simulate->add_option("--temperature", temperature, "daily temperature series")->required();
  simulate->add_option("--precipitation", precipitation, "daily precipitation series")->required();
  simulate->add_option("--human-density", density)->required();
  simulate->add_option("--gdp", gdp)->required();
  simulate->add_option("-n,--members", members);
  simulate->add_option("--seed", seed);
  simulate->add_option("--mean", mean_out, "output series of the daily mean")->required();
  simulate->add_option("--stddev", stddev_out, "output series of the daily standard deviation");
  simulate->add_flag("--serial", serial, "use the serial reference path");

  // persistence
  auto* persist = app.add_subcommand("persistence", "maxima persistence diagram of an ASCII grid");
  std::string grid_path;
  double tau = 0.0;
  std::size_t top = 0;
  persist->add_option("grid", grid_path)->required();
  persist->add_option("--tau", tau, "drop pairs with persistence below tau");
  persist->add_option("--top", top, "print only the k most persistent maxima");

  // resample
  auto* resample = app.add_subcommand("resample", "Gaussian upsampling of an ASCII grid");
  std::string resample_in, resample_out;
  int factor = 2;
  double sigma = 1.0;
  resample->add_option("grid", resample_in)->required();
  resample->add_option("-o,--out", resample_out)->required();
  resample->add_option("--factor", factor);
  resample->add_option("--sigma", sigma, "kernel width in input cells");

  // matrix
  auto* matrix = app.add_subcommand("matrix", "scheduling-coefficient matrix from job records");
  std::string records_path;
  std::vector<double> node_buckets{1, 2, 4, 8, 16, 64, 256}, hour_buckets{0.25, 0.5, 1, 2, 6, 12, 24};
  bool as_json = false;
  matrix->add_option("records", records_path, "CSV rows of nodes,runtime_s,queue_wait_s")->required();
  matrix->add_option("--nodes", node_buckets)->delimiter(',');
  matrix->add_option("--hours", hour_buckets)->delimiter(',');
  matrix->add_flag("--json", as_json);

  // route
  auto* route = app.add_subcommand("route", "queue chosen for each ensemble size");
  std::vector<int> ladder{10, 1000, 3000};
  std::string route_machines;
  int nodes = 1;
  route->add_option("--machines", route_machines, "machine configuration (JSON or YAML)");
  route->add_option("--members", ladder)->delimiter(',');
  route->add_option("--nodes", nodes);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve) {
      incident::ServiceOptions o;
      o.root = root;
      o.mode = mode == "live" ? fed::ClockMode::Live : fed::ClockMode::Virtual;
      o.live_time_scale = time_scale;
      if (!machines_file.empty()) o.machines = fed::load_machines(machines_file);
      incident::IncidentService svc(o);
      httplib::Server server;
      svc.mount(server);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("listening on {}:{}", host, port);
      if (!server.listen(host, port)) fail(ErrorCode::Precondition, "cannot listen on port " + std::to_string(port));
      svc.stop_streams();
    } else if (*simulate) {
      model::ScenarioInputs in;
      in.temperature = model::read_ascii_series(temperature);
      in.precipitation = model::read_ascii_series(precipitation);
      in.human_density = model::read_ascii_grid(density);
      in.gdp = model::read_ascii_grid(gdp);
      const auto r = model::run_ensemble(in, {members, seed, "", "", {}},
                                         serial ? model::Execution::Serial : model::Execution::Parallel);
      model::write_ascii_series(mean_out, r.mean);
      if (!stddev_out.empty()) model::write_ascii_series(stddev_out, r.stddev);
    } else if (*persist) {
      auto d = tda::persistence_maxima(model::read_ascii_grid(grid_path));
      if (tau > 0) d = tda::threshold_diagram(d, tau);
      if (top > 0) {
        nlohmann::json bars = nlohmann::json::array();
        for (const auto& b : tda::top_k_maxima(d, top))
          bars.push_back({{"cell_x", b.cell_x}, {"cell_y", b.cell_y}, {"value", b.value}, {"persistence", b.persistence}});
        std::cout << bars.dump(2) << "\n";
      } else {
        std::cout << tda::diagram_to_json(d).dump(2) << "\n";
      }
    } else if (*resample) {
      model::write_ascii_grid(resample_out,
                              tda::gaussian_resample(model::read_ascii_grid(resample_in), factor, sigma));
    } else if (*matrix) {
      const auto m = fed::scheduling_matrix(read_records(records_path), node_buckets, hour_buckets);
      std::cout << (as_json ? m.to_json().dump(2) + "\n" : m.to_csv());
    } else if (*route) {
      fed::Federation f;
      for (const auto& m : route_machines.empty() ? incident::default_machines()
                                                  : fed::load_machines(route_machines))
        f.register_machine(m);
      f.set_cost_model("mosquito", fed::kMosquitoCostModel);
      for (int n : ladder) {
        const double est = f.estimate_runtime("mosquito", n);
        try {
          const auto t = f.select_target(nodes, est);
          std::cout << n << " members: " << est << " s -> " << t.machine << "/" << t.queue << "\n";
        } catch (const Error& e) {
          std::cout << n << " members: " << est << " s -> no capacity (" << e.what() << ")\n";
        }
      }
    }
  } catch (const Error& e) {
    spdlog::error("{} ({})", e.what(), to_string(e.code()));
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
