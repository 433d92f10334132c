#include "urgent/incident/service.hpp"

#include "urgent/error.hpp"
#include "urgent/model/ensemble.hpp"
#include "urgent/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace fs = std::filesystem;

namespace urgent::incident {

namespace {

constexpr const char* kRungWorkload = "mosquito.rung";
constexpr const char* kTopoWorkload = "tda.proxy";

workload::WorkloadDescription rung_workload() {
  using workload::Step;
  return {kRungWorkload,
          {Step{"preprocess", "mosquito.preprocess",
                {{"temperature", "${temperature}"},
                 {"precipitation", "${precipitation}"},
                 {"human_density", "${human_density}"},
                 {"gdp", "${gdp}"}}},
           Step{"simulate", "mosquito.simulate",
                {{"n_members", "${n_members}"},
                 {"seed", "${seed}"},
                 {"species", "${species}"},
                 {"disease", "${disease}"},
                 {"tile_threshold", "${tile_threshold}"}}},
           Step{"export", "raster.export",
                {{"machine", "${machine}"},
                 {"incident_id", "${incident_id}"},
                 {"description", "R0 mean ${scenario_id} n=${n_members}"}}}}};
}

workload::WorkloadDescription topo_workload() {
  using workload::Step;
  return {kTopoWorkload,
          {Step{"topo", "tda.proxy",
                {{"mosaic", "${mosaic}"},
                 {"machine", "${machine}"},
                 {"incident_id", "${incident_id}"},
                 {"description", "diagrams ${scenario_id} n=${n_members}"},
                 {"bucketing", "${bucketing}"},
                 {"tau_fraction", "${tau_fraction}"},
                 {"resample_factor", "${resample_factor}"},
                 {"sigma_cells", "${sigma_cells}"}}}}};
}

std::uint64_t seed_of(const std::string& scenario_id) {
  return std::stoull(sha256_hex(scenario_id).substr(0, 15), nullptr, 16);
}

std::vector<model::ScalarGrid> read_series_bin(const fs::path& dir, const std::string& name) {
  return model::read_binary_series(dir / (name + ".bin"));
}

}  // namespace

std::string_view to_string(IncidentStatus s) {
  switch (s) {
    case IncidentStatus::Pending: return "PENDING";
    case IncidentStatus::Active: return "ACTIVE";
    case IncidentStatus::Complete: return "COMPLETE";
    case IncidentStatus::Cancelled: return "CANCELLED";
  }
  return "?";
}

std::string_view to_string(RungStatus s) {
  switch (s) {
    case RungStatus::Waiting: return "waiting";
    case RungStatus::Submitted: return "submitted";
    case RungStatus::Simulated: return "simulated";
    case RungStatus::Mosaicked: return "mosaicked";
    case RungStatus::Analysed: return "analysed";
    case RungStatus::Complete: return "complete";
    case RungStatus::Discarded: return "discarded";
    case RungStatus::Failed: return "failed";
    case RungStatus::Cancelled: return "cancelled";
  }
  return "?";
}

bool is_terminal(RungStatus s) {
  return s == RungStatus::Complete || s == RungStatus::Discarded || s == RungStatus::Failed ||
         s == RungStatus::Cancelled;
}

ScalarGrid Region::empty_grid() const {
  ScalarGrid g(ncols, nrows, nodata);
  g.x_origin = x_origin;
  g.y_origin = y_origin;
  g.cell_size_m = cell_size_m;
  g.nodata = nodata;
  return g;
}

bool Region::matches(const ScalarGrid& grid) const {
  const double tol = 1e-6 * cell_size_m;
  return grid.ncols == ncols && grid.nrows == nrows &&
         std::abs(grid.cell_size_m - cell_size_m) <= tol &&
         std::abs(grid.x_origin - x_origin) <= tol && std::abs(grid.y_origin - y_origin) <= tol;
}

Region region_from_json(const Document& j) {
  if (!j.is_object()) fail(ErrorCode::Validation, "region must be an object");
  auto number = [&j](const char* key, std::optional<double> fallback) {
    if (!j.contains(key)) {
      if (!fallback) fail(ErrorCode::Validation, std::string("region lacks '") + key + "'");
      return *fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number() || !std::isfinite(v.get<double>()))
      fail(ErrorCode::Validation, std::string("region '") + key + "' must be a finite number");
    return v.get<double>();
  };
  Region r;
  const double cols = number("ncols", std::nullopt);
  const double rows = number("nrows", std::nullopt);
  if (cols < 1 || rows < 1 || cols != std::floor(cols) || rows != std::floor(rows) ||
      cols * rows > 1e9)
    fail(ErrorCode::Validation, "region dimensions must be positive integers");
  r.ncols = static_cast<int>(cols);
  r.nrows = static_cast<int>(rows);
  r.x_origin = number("xllcorner", 0.0);
  r.y_origin = number("yllcorner", 0.0);
  r.cell_size_m = number("cellsize", model::kDefaultCellSizeM);
  r.nodata = number("nodata", model::kDefaultNodata);
  if (r.cell_size_m <= 0) fail(ErrorCode::Validation, "region cellsize must be positive");
  return r;
}

Document region_to_json(const Region& r) {
  return {{"ncols", r.ncols},       {"nrows", r.nrows},       {"xllcorner", r.x_origin},
          {"yllcorner", r.y_origin}, {"cellsize", r.cell_size_m}, {"nodata", r.nodata}};
}

std::vector<fed::MachineSpec> default_machines() {
  auto machine = [](std::string name, int nodes) {
    fed::MachineSpec m;
    m.name = std::move(name);
    m.total_nodes = nodes;
    m.queues = {fed::QueueSpec{"short", 4, fed::kShortQueueWalltimeS, 10, true, std::nullopt},
                fed::QueueSpec{"standard", nodes, 86400, 0, false, std::nullopt}};
    return m;
  };
  return {machine("hpc-a", 280), machine("hpc-b", 64)};
}

IncidentService::IncidentService(ServiceOptions options) : options_(std::move(options)) {
  validate_ladder(options_.default_ladder);
  fs::create_directories(options_.root);
  catalog_ = std::make_unique<data::DataCatalog>(options_.root);

  workflow::BrokerOptions bo;
  bo.workers = options_.broker_workers != 0
                   ? options_.broker_workers
                   : (options_.mode == fed::ClockMode::Virtual ? 1 : 4);
  bo.journal_path = options_.root / "journal.jsonl";
  broker_ = std::make_unique<workflow::Broker>(bo);

  // Job working directories live inside the machine directories of the catalogue.
  runner_ = std::make_unique<workload::WorkloadRunner>(options_.root / "machines");

  fed::FederationOptions fo;
  fo.mode = options_.mode;
  fo.live_time_scale = options_.live_time_scale;
  federation_ = std::make_unique<fed::Federation>(fo, broker_.get(), catalog_.get());
  federation_->set_cost_model("mosquito", options_.mosquito_cost);
  federation_->set_cost_model("tda", options_.tda_cost);
  for (const auto& m : options_.machines) {
    federation_->register_machine(m);
    runner_->set_machine_parameters(
        m.name, workload::ParameterDocument{m.name, workload::Scope::Machine, {{"machine", m.name}}});
  }
  federation_->set_executor([this](const fed::Job& job) { return execute(job); });

  edi_ = std::make_unique<edi::ExternalDataInterface>(*broker_, options_.root, options_.fetcher);

  register_operations();
  runner_->register_description(rung_workload());
  runner_->register_description(topo_workload());

  if (options_.mode == fed::ClockMode::Live) federation_->start_live();
}

IncidentService::~IncidentService() {
  stop_streams();
  edi_.reset();
  federation_->stop_live();
  broker_->shutdown();
}

void IncidentService::stop_streams() {
  {
    std::lock_guard lock(mutex_);
    streams_stopped_ = true;
  }
  events_cv_.notify_all();
}

void IncidentService::register_operations() {
  data::DataCatalog* catalog = catalog_.get();

  runner_->register_operation(
      "mosquito.preprocess", [catalog](const Document& p, const fs::path& dir) {
        model::ScenarioInputs in;
        in.temperature = model::read_ascii_series(catalog->path_of(p.at("temperature")));
        in.precipitation = model::read_ascii_series(catalog->path_of(p.at("precipitation")));
        const auto hd = model::read_ascii_series(catalog->path_of(p.at("human_density")));
        const auto gdp = model::read_ascii_series(catalog->path_of(p.at("gdp")));
        if (hd.size() != 1 || gdp.size() != 1)
          fail(ErrorCode::Validation, "human_density and gdp must be single grids");
        in.human_density = hd.front();
        in.gdp = gdp.front();
        in.validate();
        model::write_binary_series(dir / "temperature.bin", in.temperature);
        model::write_binary_series(dir / "precipitation.bin", in.precipitation);
        model::write_binary_series(dir / "human_density.bin", hd);
        model::write_binary_series(dir / "gdp.bin", gdp);
        return std::vector<std::string>{};
      });

  runner_->register_operation(
      "mosquito.simulate", [](const Document& p, const fs::path& dir) {
        model::ScenarioInputs in;
        in.temperature = read_series_bin(dir, "temperature");
        in.precipitation = read_series_bin(dir, "precipitation");
        in.human_density = read_series_bin(dir, "human_density").front();
        in.gdp = read_series_bin(dir, "gdp").front();
        model::EnsembleConfig cfg;
        cfg.n_members = p.at("n_members").get<int>();
        cfg.scenario_seed = p.at("seed").get<std::uint64_t>();
        cfg.species = p.at("species").get<std::string>();
        cfg.disease = p.at("disease").get<std::string>();
        const auto tiles = plan_tiles(in.human_density.ncols, in.human_density.nrows,
                                      p.at("tile_threshold").get<std::size_t>());
        for (std::size_t k = 0; k < tiles.size(); ++k) {
          const auto& t = tiles[k];
          const model::R0Result r =
              tiles.size() == 1
                  ? model::run_ensemble(in, cfg)
                  : model::run_ensemble(model::crop_inputs(in, t.col0, t.row0, t.ncols, t.nrows),
                                        cfg);
          model::write_binary_series(dir / ("tile-" + std::to_string(k) + ".mean.bin"), r.mean);
          model::write_binary_series(dir / ("tile-" + std::to_string(k) + ".sd.bin"), r.stddev);
        }
        write_file(dir / "tiles.count", std::to_string(tiles.size()));
        return std::vector<std::string>{};
      });

  runner_->register_operation(
      "raster.export", [catalog](const Document& p, const fs::path& dir) {
        const auto count = std::stoul(read_file(dir / "tiles.count"));
        std::vector<std::string> ids;
        for (std::size_t k = 0; k < count; ++k) {
          const std::string stem = "tile-" + std::to_string(k);
          const fs::path out = dir / ("r0-mean-" + stem + ".asc");
          model::write_ascii_series(out, model::read_binary_series(dir / (stem + ".mean.bin")));
          ids.push_back(catalog->register_file(
              out.string(), p.at("machine"), static_cast<std::int64_t>(fs::file_size(out)),
              p.at("incident_id"), data::Kind::Raster,
              p.at("description").get<std::string>() + " tile " + std::to_string(k)));
        }
        return ids;
      });

  runner_->register_operation("tda.proxy", [catalog](const Document& p, const fs::path& dir) {
    TopoOptions opt;
    opt.bucketing = bucketing_from_string(p.at("bucketing").get<std::string>());
    opt.tau_fraction = p.at("tau_fraction").get<double>();
    opt.resample_factor = p.at("resample_factor").get<int>();
    opt.sigma_cells = p.at("sigma_cells").get<double>();
    const auto mosaic = model::read_ascii_series(catalog->path_of(p.at("mosaic")));
    const fs::path out = dir / "diagrams.json";
    write_file(out, bundle_to_json(topo_bundle(mosaic, opt)).dump());
    return std::vector<std::string>{catalog->register_file(
        out.string(), p.at("machine"), static_cast<std::int64_t>(fs::file_size(out)),
        p.at("incident_id"), data::Kind::Diagram, p.at("description"))};
  });
}

fed::JobOutcome IncidentService::execute(const fed::Job& job) {
  const std::size_t steps = job.workload_ref == kRungWorkload ? rung_workload().steps.size()
                                                              : topo_workload().steps.size();
  fed::JobOutcome out;
  try {
    const auto outcomes = runner_->execute_workload(job.workload_ref, job.params_ref, job.machine,
                                                    job.id);
    out.ok = workload::succeeded(outcomes, steps);
    for (const auto& o : outcomes) {
      out.outputs.insert(out.outputs.end(), o.produced.begin(), o.produced.end());
      if (!o.ok) out.error = o.step + ": " + o.error;
    }
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

void IncidentService::ensure_stages_locked() {
  if (stages_registered_) return;
  auto reg = [this](const char* queue, const char* stage, void (IncidentService::*fn)(const workflow::Message&)) {
    broker_->register_stage(queue, stage, [this, stage, fn](const workflow::Message& m) {
      guard(stage, m, [&] { (this->*fn)(m); });
    });
  };
  reg(kInitQueue, "init", &IncidentService::stage_init);
  reg(kSimulateQueue, "simulate", &IncidentService::stage_simulate);
  reg(kMosaicQueue, "mosaic", &IncidentService::stage_mosaic);
  reg(kTopoQueue, "topo", &IncidentService::stage_topo);
  reg(kCompleteQueue, "complete", &IncidentService::stage_complete);
  reg(kFailedQueue, "failed", &IncidentService::stage_failed);
  stages_registered_ = true;
}

void IncidentService::guard(const char* stage, const workflow::Message& msg,
                            const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    spdlog::warn("stage '{}' failed on message {}: {}", stage, msg.id, e.what());
    std::lock_guard lock(mutex_);
    const Document& p = msg.payload;
    const Document tags = p.value("tags", Document::object());
    const std::string sid = tags.value("scenario_id", p.value("scenario_id", std::string{}));
    auto it = scenarios_.find(sid);
    if (it != scenarios_.end()) {
      const int fidelity = tags.value("fidelity", p.value("fidelity", 0));
      auto r = it->second.rungs.find(fidelity);
      if (r != it->second.rungs.end() && !is_terminal(r->second.status))
        fail_rung_locked(it->second, r->second, stage, e.what());
      else
        emit_locked(it->second, "failed", {{"stage", stage}, {"error", e.what()}});
      check_finished_locked(it->second);
    } else if (auto inc = incidents_.find(msg.incident_id); inc != incidents_.end()) {
      log_locked(inc->second, "stage_failed", {{"stage", stage}, {"error", e.what()}});
    }
    throw;
  }
}

// ---------------------------------------------------------------- lifecycle

std::string IncidentService::create_incident(const Document& request) {
  if (!request.is_object()) fail(ErrorCode::Validation, "incident request must be an object");
  Incident inc;
  inc.kind = request.value("kind", "mosquito");
  if (inc.kind != "mosquito") fail(ErrorCode::Validation, "unsupported incident kind " + inc.kind);
  if (!request.contains("region")) fail(ErrorCode::Validation, "incident needs a region");
  inc.region = region_from_json(request.at("region"));
  try {
    inc.species = request.value("species", "aedes-albopictus");
    inc.disease = request.value("disease", "dengue");
    inc.ladder = request.value("ladder", options_.default_ladder);
    inc.topo = options_.topo;
    if (request.contains("bucketing"))
      inc.topo.bucketing = bucketing_from_string(request.at("bucketing").get<std::string>());
    inc.topo.tau_fraction = request.value("tau_fraction", inc.topo.tau_fraction);
    if (request.contains("pull")) {
      for (auto it = request.at("pull").begin(); it != request.at("pull").end(); ++it) {
        if (std::find(kInputKinds.begin(), kInputKinds.end(), it.key()) == kInputKinds.end())
          fail(ErrorCode::Validation, "unknown input kind " + it.key());
        PullSource ps{it.value().at("source").get<std::string>(),
                      std::chrono::milliseconds(it.value().value("interval_ms", 1000))};
        inc.pull.emplace(it.key(), ps);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("malformed incident request: ") + e.what());
  }
  validate_ladder(inc.ladder);
  inc.created_at = wall_clock_ms();

  std::lock_guard lock(mutex_);
  inc.id = "inc-" + std::to_string(next_incident_++);
  log_locked(inc, "created", {{"status", "PENDING"}});
  const std::string id = inc.id;
  incidents_.emplace(id, std::move(inc));
  return id;
}

std::vector<std::string> IncidentService::activate(const std::string& incident_id) {
  std::lock_guard lock(mutex_);
  Incident& inc = incident_locked(incident_id);
  if (inc.status != IncidentStatus::Pending)
    fail(ErrorCode::Conflict, "incident " + incident_id + " is " + std::string(to_string(inc.status)));
  ensure_stages_locked();
  for (const auto& kind : kInputKinds) {
    edi::EdiHandler h;
    h.name = inc.id + "." + kind;
    h.target_queue = kInitQueue;
    h.incident_id = inc.id;
    h.metadata = {{"kind", kind}};
    if (auto p = inc.pull.find(kind); p != inc.pull.end()) {
      h.mode = edi::Mode::Pull;
      h.pull_source = p->second.source;
      h.poll_interval = p->second.interval;
    }
    inc.handlers.push_back(edi_->register_handler(std::move(h)));
  }
  inc.status = IncidentStatus::Active;
  log_locked(inc, "activated", {{"handlers", inc.handlers}});
  return inc.handlers;
}

void IncidentService::complete_incident(const std::string& incident_id) {
  std::lock_guard lock(mutex_);
  Incident& inc = incident_locked(incident_id);
  if (inc.status != IncidentStatus::Active)
    fail(ErrorCode::Conflict, "incident " + incident_id + " is " + std::string(to_string(inc.status)));
  edi_->deactivate_handlers(inc.id);
  inc.status = IncidentStatus::Complete;
  log_locked(inc, "completed", Document::object());
}

void IncidentService::cancel_incident(const std::string& incident_id) {
  std::lock_guard lock(mutex_);
  Incident& inc = incident_locked(incident_id);
  if (inc.status == IncidentStatus::Complete || inc.status == IncidentStatus::Cancelled)
    fail(ErrorCode::Conflict, "incident " + incident_id + " is " + std::string(to_string(inc.status)));
  edi_->deactivate_handlers(inc.id);
  inc.status = IncidentStatus::Cancelled;
  for (const auto& sid : inc.scenarios) {
    Scenario& s = scenario_locked(sid);
    for (auto& [n, r] : s.rungs) {
      if (is_terminal(r.status)) continue;
      if (!r.job_id.empty()) federation_->cancel(r.job_id);
      if (!r.tda_job_id.empty()) federation_->cancel(r.tda_job_id);
      r.status = RungStatus::Cancelled;
      emit_locked(s, "cancelled", {{"fidelity", n}, {"reason", "incident cancelled"}});
    }
    check_finished_locked(s);
  }
  log_locked(inc, "cancelled", Document::object());
}

std::string IncidentService::create_scenario(const std::string& incident_id,
                                             std::optional<std::vector<int>> ladder) {
  if (ladder) validate_ladder(*ladder);
  std::lock_guard lock(mutex_);
  Incident& inc = incident_locked(incident_id);
  if (inc.status != IncidentStatus::Active)
    fail(ErrorCode::Conflict, "incident " + incident_id + " is not ACTIVE");
  const std::string sid = start_scenario_locked(inc, std::move(ladder));
  if (inc.last_inputs) launch_locked(inc, scenario_locked(sid), *inc.last_inputs);
  else inc.waiting_scenarios.push_back(sid);
  return sid;
}

std::string IncidentService::start_scenario_locked(Incident& inc,
                                                   std::optional<std::vector<int>> ladder) {
  Scenario s;
  s.id = "sc-" + std::to_string(next_scenario_++);
  s.incident_id = inc.id;
  s.ladder = ladder ? *ladder : inc.ladder;
  s.seed = seed_of(s.id);
  s.created_at = wall_clock_ms();
  for (int n : s.ladder) s.rungs[n].fidelity = n;
  inc.scenarios.push_back(s.id);
  log_locked(inc, "scenario_created", {{"scenario_id", s.id}, {"ladder", s.ladder}});
  const std::string id = s.id;
  scenarios_.emplace(id, std::move(s));
  return id;
}

void IncidentService::launch_locked(Incident& inc, Scenario& s,
                                    const std::map<std::string, std::string>& inputs) {
  s.inputs = inputs;
  emit_locked(s, "stage", {{"stage", "init"}, {"inputs", inputs}});
  broker_->send(kSimulateQueue, inc.id, {{"scenario_id", s.id}});
}

// ------------------------------------------------------------------- stages

void IncidentService::stage_init(const workflow::Message& msg) {
  const std::string kind = msg.payload.at("metadata").at("kind").get<std::string>();
  const std::string hash = msg.payload.at("hash").get<std::string>();
  const std::string content = edi::payload_content(msg.payload);
  const auto grids = model::parse_ascii_series(content);

  std::lock_guard lock(mutex_);
  Incident& inc = incident_locked(msg.incident_id);
  if (inc.status != IncidentStatus::Active) {
    log_locked(inc, "input_ignored", {{"kind", kind}, {"status", to_string(inc.status)}});
    return;
  }
  const bool single = kind == "human_density" || kind == "gdp";
  if (grids.empty() || (single && grids.size() != 1))
    fail(ErrorCode::Validation, kind + " must hold " + (single ? "exactly one grid" : "a daily series"));
  for (const auto& g : grids)
    if (!inc.region.matches(g)) fail(ErrorCode::Validation, kind + " grid does not match the region");

  const fs::path path = catalog_->machine_dir(std::string(data::kControlMachine)) / "incidents" /
                        inc.id / "inputs" / (kind + "-" + hash.substr(0, 16) + ".asc");
  write_file(path, content);
  const std::string id =
      catalog_->register_file(path.string(), std::string(data::kControlMachine),
                              static_cast<std::int64_t>(content.size()), inc.id, data::Kind::Input, kind);
  inc.pending_inputs[kind] = id;
  log_locked(inc, "input", {{"kind", kind}, {"data_id", id}});

  for (const auto& k : kInputKinds)
    if (!inc.pending_inputs.count(k)) return;
  const auto inputs = inc.pending_inputs;
  inc.pending_inputs.clear();
  inc.last_inputs = inputs;
  std::string sid;
  if (!inc.waiting_scenarios.empty()) {
    sid = inc.waiting_scenarios.front();
    inc.waiting_scenarios.erase(inc.waiting_scenarios.begin());
  } else {
    sid = start_scenario_locked(inc, std::nullopt);
  }
  launch_locked(inc, scenario_locked(sid), inputs);
}

std::string IncidentService::resident_copy(const std::string& id, const std::string& machine) const {
  const data::DataEntry e = catalog_->get(id);
  if (e.machine == machine && e.status == data::Status::Available) return id;
  for (const auto& c : catalog_->all())
    if (c.copied_from == id && c.machine == machine && c.status == data::Status::Available)
      return c.id;
  return {};
}

IncidentService::Placement IncidentService::place_locked(int nodes, double est_runtime_s,
                                                         const std::vector<std::string>& inputs) {
  Placement p;
  p.target = federation_->select_target(nodes, est_runtime_s, inputs);
  const double bandwidth = federation_->machine(p.target.machine).bandwidth_bytes_per_s;
  for (const auto& id : inputs) {
    std::string local = resident_copy(id, p.target.machine);
    if (local.empty()) {
      const data::CopyResult c = catalog_->copy(id, p.target.machine, bandwidth);
      p.transfer_s += c.transfer_s;
      local = c.id;
    }
    p.resident_ids.push_back(local);
  }
  return p;
}

void IncidentService::stage_simulate(const workflow::Message& msg) {
  std::lock_guard lock(mutex_);
  Scenario& s = scenario_locked(msg.payload.at("scenario_id").get<std::string>());
  Incident& inc = incident_locked(s.incident_id);
  if (inc.status == IncidentStatus::Cancelled) return;

  std::vector<std::string> inputs;
  for (const auto& k : kInputKinds) inputs.push_back(s.inputs.at(k));

  for (int n : s.ladder) {
    RungState& r = rung_locked(s, n);
    if (r.status != RungStatus::Waiting) continue;
    try {
      const double est = federation_->estimate_runtime("mosquito", n);
      const Placement place = place_locked(options_.nodes_per_job, est, inputs);

      workload::ParameterDocument params;
      params.id = s.id + ".n" + std::to_string(n);
      params.values = {{"scenario_id", s.id},
                       {"incident_id", inc.id},
                       {"n_members", n},
                       {"seed", s.seed},
                       {"species", inc.species},
                       {"disease", inc.disease},
                       {"tile_threshold", options_.tile_threshold_cells}};
      for (std::size_t i = 0; i < kInputKinds.size(); ++i)
        params.values[kInputKinds[i]] = place.resident_ids[i];
      runner_->register_parameters(params);

      fed::Job job;
      job.incident_id = inc.id;
      job.machine = place.target.machine;
      job.queue = place.target.queue;
      job.nodes = options_.nodes_per_job;
      job.callbacks = {{fed::JobState::Completed, kMosaicQueue}, {fed::JobState::Failed, kFailedQueue}};
      job.workload_ref = kRungWorkload;
      job.params_ref = params.id;
      job.runtime_s = est;
      if (place.transfer_s > 0) job.release_t = federation_->now() + place.transfer_s;
      job.tags = {{"scenario_id", s.id}, {"fidelity", n}, {"stage", "simulate"}};
      r.job_id = federation_->submit(job);
      r.machine = job.machine;
      r.queue = job.queue;
      r.status = RungStatus::Submitted;
      emit_locked(s, "stage", {{"stage", "simulate"},
                               {"fidelity", n},
                               {"job_id", r.job_id},
                               {"machine", r.machine},
                               {"queue", r.queue},
                               {"estimated_runtime_s", est},
                               {"transfer_s", place.transfer_s}});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NoCapacity)
        log_locked(inc, "no-capacity", {{"scenario_id", s.id}, {"fidelity", n}, {"error", e.what()}});
      fail_rung_locked(s, r, "simulate", e.what());
    }
  }
  check_finished_locked(s);
}

void IncidentService::stage_mosaic(const workflow::Message& msg) {
  const Document& tags = msg.payload.at("tags");
  const std::string sid = tags.at("scenario_id");
  const int n = tags.at("fidelity");
  std::vector<std::string> rasters;
  Region region;
  std::string incident_id;
  {
    std::lock_guard lock(mutex_);
    Scenario& s = scenario_locked(sid);
    RungState& r = rung_locked(s, n);
    if (r.status != RungStatus::Submitted) return;  // cancelled meanwhile
    rasters = msg.payload.at("outputs").get<std::vector<std::string>>();
    r.raster_ids = rasters;
    r.status = RungStatus::Simulated;
    r.completed_stages.push_back("simulated");
    region = incident_locked(s.incident_id).region;
    incident_id = s.incident_id;
    emit_locked(s, "stage", {{"stage", "mosaic"}, {"fidelity", n}, {"raster_ids", rasters}});
  }
  if (rasters.empty()) fail(ErrorCode::Validation, "simulation job registered no raster tiles");

  std::vector<std::vector<ScalarGrid>> tiles;
  for (const auto& id : rasters) tiles.push_back(model::parse_ascii_series(catalog_->fetch_all(id)));
  const auto mosaic = stitch_mosaic(region.empty_grid(), tiles);
  const fs::path path = catalog_->machine_dir(std::string(data::kControlMachine)) / "incidents" /
                        incident_id / sid / ("mosaic-n" + std::to_string(n) + ".asc");
  model::write_ascii_series(path, mosaic);
  const std::string mosaic_id = catalog_->register_file(
      path.string(), std::string(data::kControlMachine), static_cast<std::int64_t>(fs::file_size(path)),
      incident_id, data::Kind::Mosaic, "R0 mosaic " + sid + " n=" + std::to_string(n));

  std::lock_guard lock(mutex_);
  Scenario& s = scenario_locked(sid);
  RungState& r = rung_locked(s, n);
  r.mosaic_id = mosaic_id;
  if (r.status != RungStatus::Simulated) return;
  r.status = RungStatus::Mosaicked;
  r.completed_stages.push_back("mosaicked");
  const Incident& inc = incident_locked(s.incident_id);

  const double est = federation_->estimate_runtime("tda", 1);
  const Placement place = place_locked(1, est, {mosaic_id});
  workload::ParameterDocument params;
  params.id = s.id + ".n" + std::to_string(n) + ".topo";
  params.values = {{"scenario_id", s.id},
                   {"incident_id", inc.id},
                   {"n_members", n},
                   {"mosaic", place.resident_ids.front()},
                   {"bucketing", std::string(to_string(inc.topo.bucketing))},
                   {"tau_fraction", inc.topo.tau_fraction},
                   {"resample_factor", inc.topo.resample_factor},
                   {"sigma_cells", inc.topo.sigma_cells}};
  runner_->register_parameters(params);

  fed::Job job;
  job.incident_id = inc.id;
  job.machine = place.target.machine;
  job.queue = place.target.queue;
  job.nodes = 1;
  job.callbacks = {{fed::JobState::Completed, kTopoQueue}, {fed::JobState::Failed, kFailedQueue}};
  job.workload_ref = kTopoWorkload;
  job.params_ref = params.id;
  job.runtime_s = est;
  if (place.transfer_s > 0) job.release_t = federation_->now() + place.transfer_s;
  job.tags = {{"scenario_id", s.id}, {"fidelity", n}, {"stage", "topo"}};
  r.tda_job_id = federation_->submit(job);
}

void IncidentService::stage_topo(const workflow::Message& msg) {
  const Document& tags = msg.payload.at("tags");
  const std::string sid = tags.at("scenario_id");
  const int n = tags.at("fidelity");
  const auto outputs = msg.payload.at("outputs").get<std::vector<std::string>>();
  if (outputs.size() != 1) fail(ErrorCode::Validation, "topological job must register one bundle");
  if (catalog_->get(outputs.front()).kind != data::Kind::Diagram)
    fail(ErrorCode::Validation, "topological job output is not a diagram bundle");

  std::lock_guard lock(mutex_);
  Scenario& s = scenario_locked(sid);
  RungState& r = rung_locked(s, n);
  r.diagrams_id = outputs.front();
  if (r.status != RungStatus::Mosaicked) return;
  r.status = RungStatus::Analysed;
  r.completed_stages.push_back("analysed");
  emit_locked(s, "stage", {{"stage", "topo"}, {"fidelity", n}, {"diagrams_id", r.diagrams_id}});
  broker_->send(kCompleteQueue, s.incident_id, {{"scenario_id", s.id}, {"fidelity", n}});
}

void IncidentService::stage_complete(const workflow::Message& msg) {
  const std::string sid = msg.payload.at("scenario_id");
  const int n = msg.payload.at("fidelity");

  std::lock_guard lock(mutex_);
  Scenario& s = scenario_locked(sid);
  RungState& r = rung_locked(s, n);
  if (r.status == RungStatus::Complete || r.status == RungStatus::Discarded) return;
  if (r.raster_ids.empty() || r.mosaic_id.empty() || r.diagrams_id.empty())
    fail(ErrorCode::Precondition, "result set n=" + std::to_string(n) + " lacks data ids");
  emit_locked(s, "stage", {{"stage", "complete"}, {"fidelity", n}});

  const Supersession decision = supersede(s.visible, n);
  if (decision == Supersession::Discarded || r.status == RungStatus::Cancelled) {
    r.status = RungStatus::Discarded;
    emit_locked(s, "discarded", {{"fidelity", n}, {"visible", s.visible ? Document(*s.visible) : Document()}});
    check_finished_locked(s);
    return;
  }

  const std::optional<int> previous = s.visible;
  r.status = RungStatus::Complete;
  r.completed_at = wall_clock_ms();
  s.visible = n;
  emit_locked(s, "fidelity_changed",
              {{"from", previous ? Document(*previous) : Document()}, {"to", n},
               {"result", result_json_locked(s, r)}});
  if (previous) emit_locked(s, "superseded", {{"previous", *previous}, {"fidelity", n}});

  // Coarser rungs still in flight can no longer become visible.
  for (auto& [m, coarse] : s.rungs) {
    if (m >= n || is_terminal(coarse.status)) continue;
    if (!coarse.job_id.empty()) federation_->cancel(coarse.job_id);
    if (!coarse.tda_job_id.empty()) federation_->cancel(coarse.tda_job_id);
    coarse.status = RungStatus::Cancelled;
    emit_locked(s, "cancelled", {{"fidelity", m}, {"reason", "superseded by n=" + std::to_string(n)}});
  }
  check_finished_locked(s);
}

void IncidentService::stage_failed(const workflow::Message& msg) {
  const Document& tags = msg.payload.at("tags");
  const std::string sid = tags.at("scenario_id");
  const int n = tags.at("fidelity");
  std::lock_guard lock(mutex_);
  Scenario& s = scenario_locked(sid);
  RungState& r = rung_locked(s, n);
  if (is_terminal(r.status)) return;
  fail_rung_locked(s, r, tags.value("stage", "job"),
                   msg.payload.value("error", std::string("job ") + msg.payload.value("state", "failed")));
  check_finished_locked(s);
}

// ------------------------------------------------------------------ helpers

void IncidentService::emit_locked(Scenario& s, const std::string& type, Document data) {
  data["scenario_id"] = s.id;
  data["incident_id"] = s.incident_id;
  data["t"] = federation_->now();
  data["wall_ms"] = wall_clock_ms();
  s.events.push_back(ServiceEvent{s.events.size(), type, std::move(data)});
  events_cv_.notify_all();
}

void IncidentService::fail_rung_locked(Scenario& s, RungState& r, const std::string& stage,
                                       const std::string& error) {
  r.status = RungStatus::Failed;
  r.error = stage + ": " + error;
  emit_locked(s, "failed", {{"fidelity", r.fidelity}, {"stage", stage}, {"error", error}});
  if (auto inc = incidents_.find(s.incident_id); inc != incidents_.end())
    log_locked(inc->second, "rung_failed",
               {{"scenario_id", s.id}, {"fidelity", r.fidelity}, {"stage", stage}, {"error", error}});
}

void IncidentService::check_finished_locked(Scenario& s) {
  if (s.finished) return;
  for (const auto& [n, r] : s.rungs)
    if (!is_terminal(r.status)) return;
  s.finished = true;
  emit_locked(s, "complete", {{"visible", s.visible ? Document(*s.visible) : Document()}});
}

void IncidentService::log_locked(Incident& inc, const std::string& type, Document detail) {
  inc.log.push_back({{"type", type}, {"wall_ms", wall_clock_ms()}, {"detail", std::move(detail)}});
}

Document IncidentService::result_json_locked(const Scenario& s, const RungState& r) const {
  return {{"scenario_id", s.id},
          {"incident_id", s.incident_id},
          {"fidelity", r.fidelity},
          {"raster_id", r.raster_ids.empty() ? std::string() : r.raster_ids.front()},
          {"raster_ids", r.raster_ids},
          {"mosaic_id", r.mosaic_id},
          {"diagrams_id", r.diagrams_id},
          {"completed_stages", r.completed_stages},
          {"completed_at", r.completed_at}};
}

Incident& IncidentService::incident_locked(const std::string& id) {
  auto it = incidents_.find(id);
  if (it == incidents_.end()) fail(ErrorCode::NotFound, "unknown incident " + id);
  return it->second;
}

const Incident& IncidentService::incident_locked(const std::string& id) const {
  auto it = incidents_.find(id);
  if (it == incidents_.end()) fail(ErrorCode::NotFound, "unknown incident " + id);
  return it->second;
}

Scenario& IncidentService::scenario_locked(const std::string& id) {
  auto it = scenarios_.find(id);
  if (it == scenarios_.end()) fail(ErrorCode::NotFound, "unknown scenario " + id);
  return it->second;
}

const Scenario& IncidentService::scenario_locked(const std::string& id) const {
  auto it = scenarios_.find(id);
  if (it == scenarios_.end()) fail(ErrorCode::NotFound, "unknown scenario " + id);
  return it->second;
}

RungState& IncidentService::rung_locked(Scenario& s, int fidelity) {
  auto it = s.rungs.find(fidelity);
  if (it == s.rungs.end())
    fail(ErrorCode::NotFound, "scenario " + s.id + " has no rung n=" + std::to_string(fidelity));
  return it->second;
}

// ------------------------------------------------------------------ queries

Document IncidentService::incident_json(const std::string& incident_id) const {
  std::lock_guard lock(mutex_);
  const Incident& inc = incident_locked(incident_id);
  Document pending = Document::object();
  for (const auto& [k, v] : inc.pending_inputs) pending[k] = v;
  return {{"id", inc.id},
          {"kind", inc.kind},
          {"region", region_to_json(inc.region)},
          {"species", inc.species},
          {"disease", inc.disease},
          {"status", to_string(inc.status)},
          {"created_at", inc.created_at},
          {"ladder", inc.ladder},
          {"bucketing", to_string(inc.topo.bucketing)},
          {"handlers", inc.handlers},
          {"scenarios", inc.scenarios},
          {"pending_inputs", pending},
          {"log", inc.log}};
}

Document IncidentService::scenario_json(const std::string& scenario_id) const {
  std::lock_guard lock(mutex_);
  const Scenario& s = scenario_locked(scenario_id);
  Document rungs = Document::array();
  for (const auto& [n, r] : s.rungs) {
    Document j = result_json_locked(s, r);
    j["status"] = to_string(r.status);
    j["job_id"] = r.job_id;
    j["tda_job_id"] = r.tda_job_id;
    j["machine"] = r.machine;
    j["queue"] = r.queue;
    j["error"] = r.error;
    rungs.push_back(std::move(j));
  }
  return {{"id", s.id},
          {"incident_id", s.incident_id},
          {"ladder", s.ladder},
          {"seed", s.seed},
          {"inputs", s.inputs},
          {"visible_fidelity", s.visible ? Document(*s.visible) : Document()},
          {"finished", s.finished},
          {"rungs", rungs},
          {"events", s.events.size()}};
}

Document IncidentService::visible_result(const std::string& scenario_id) const {
  std::lock_guard lock(mutex_);
  const Scenario& s = scenario_locked(scenario_id);
  if (!s.visible) fail(ErrorCode::NotFound, "scenario " + scenario_id + " has no complete result yet");
  return result_json_locked(s, s.rungs.at(*s.visible));
}

std::optional<int> IncidentService::visible_fidelity(const std::string& scenario_id) const {
  std::lock_guard lock(mutex_);
  return scenario_locked(scenario_id).visible;
}

std::vector<ServiceEvent> IncidentService::events(const std::string& scenario_id,
                                                  std::size_t from) const {
  std::lock_guard lock(mutex_);
  const Scenario& s = scenario_locked(scenario_id);
  if (from >= s.events.size()) return {};
  return {s.events.begin() + static_cast<std::ptrdiff_t>(from), s.events.end()};
}

std::vector<ServiceEvent> IncidentService::wait_events(const std::string& scenario_id,
                                                       std::size_t from,
                                                       std::chrono::milliseconds timeout,
                                                       bool& finished) const {
  std::unique_lock lock(mutex_);
  const Scenario& s = scenario_locked(scenario_id);
  events_cv_.wait_for(lock, timeout, [&] {
    return streams_stopped_ || s.finished || s.events.size() > from;
  });
  finished = s.finished || streams_stopped_;
  if (from >= s.events.size()) return {};
  return {s.events.begin() + static_cast<std::ptrdiff_t>(from), s.events.end()};
}

std::vector<std::string> IncidentService::scenarios_of(const std::string& incident_id) const {
  std::lock_guard lock(mutex_);
  return incident_locked(incident_id).scenarios;
}

std::size_t IncidentService::run_until_idle() {
  require(options_.mode == fed::ClockMode::Virtual, "run_until_idle drives virtual mode only");
  std::size_t handled = 0;
  for (;;) {
    broker_->drain(std::chrono::minutes(10));
    const auto next = federation_->next_event_time();
    if (!next) break;
    handled += federation_->advance(*next);
  }
  return handled;
}

bool IncidentService::wait_finished(const std::string& scenario_id,
                                    std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  const Scenario& s = scenario_locked(scenario_id);
  return events_cv_.wait_for(lock, timeout, [&] { return s.finished; });
}

}  // namespace urgent::incident
