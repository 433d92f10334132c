#pragma once

#include "urgent/data/catalog.hpp"
#include "urgent/edi/edi.hpp"
#include "urgent/federation/federation.hpp"
#include "urgent/incident/stages.hpp"
#include "urgent/workflow/broker.hpp"
#include "urgent/workload/runner.hpp"

#include <nlohmann/json.hpp>

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace urgent::incident {

using Document = nlohmann::json;

// Workflow queues of the mosquito scenario, in stage order.
inline constexpr const char* kInitQueue = "mosquito.init";
inline constexpr const char* kSimulateQueue = "mosquito.simulate";
inline constexpr const char* kMosaicQueue = "mosquito.mosaic";
inline constexpr const char* kTopoQueue = "mosquito.topo";
inline constexpr const char* kCompleteQueue = "mosquito.complete";
inline constexpr const char* kFailedQueue = "mosquito.failed";

inline const std::vector<std::string> kInputKinds{"temperature", "precipitation",
                                                  "human_density", "gdp"};

enum class IncidentStatus { Pending, Active, Complete, Cancelled };
std::string_view to_string(IncidentStatus s);

enum class RungStatus {
  Waiting,
  Submitted,
  Simulated,
  Mosaicked,
  Analysed,
  Complete,
  Discarded,
  Failed,
  Cancelled,
};
std::string_view to_string(RungStatus s);
bool is_terminal(RungStatus s);

struct Region {
  int ncols = 0;
  int nrows = 0;
  double x_origin = 0.0;
  double y_origin = 0.0;
  double cell_size_m = model::kDefaultCellSizeM;
  double nodata = model::kDefaultNodata;

  ScalarGrid empty_grid() const;
  bool matches(const ScalarGrid& grid) const;
};

// Throws Validation on a malformed region.
Region region_from_json(const Document& j);
Document region_to_json(const Region& r);

struct PullSource {
  std::string source;
  std::chrono::milliseconds interval{1000};
};

struct Incident {
  std::string id;
  std::string kind = "mosquito";
  Region region;
  std::string species;
  std::string disease;
  IncidentStatus status = IncidentStatus::Pending;
  std::int64_t created_at = 0;
  std::vector<int> ladder;
  TopoOptions topo;
  std::map<std::string, PullSource> pull;  // input kind -> polled source
  std::vector<std::string> handlers;
  std::vector<std::string> scenarios;
  std::map<std::string, std::string> pending_inputs;  // kind -> data id
  std::optional<std::map<std::string, std::string>> last_inputs;
  std::vector<std::string> waiting_scenarios;
  Document log = Document::array();
};

struct RungState {
  int fidelity = 0;
  RungStatus status = RungStatus::Waiting;
  std::string job_id;
  std::string tda_job_id;
  std::string machine;
  std::string queue;
  std::vector<std::string> raster_ids;
  std::string mosaic_id;
  std::string diagrams_id;
  std::vector<std::string> completed_stages;  // simulated, mosaicked, analysed
  std::int64_t completed_at = 0;
  std::string error;
};

struct ServiceEvent {
  std::size_t seq = 0;
  std::string type;
  Document data;
};

struct Scenario {
  std::string id;
  std::string incident_id;
  std::vector<int> ladder;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<int, RungState> rungs;
  std::optional<int> visible;
  std::vector<ServiceEvent> events;
  bool finished = false;
  std::int64_t created_at = 0;
};

// Two machines, each with a 4-node/1200 s short queue and a large normal queue.
std::vector<fed::MachineSpec> default_machines();

struct ServiceOptions {
  std::filesystem::path root = "urgent-data";
  fed::ClockMode mode = fed::ClockMode::Virtual;
  std::vector<fed::MachineSpec> machines = default_machines();
  // 0 picks one worker in virtual mode (deterministic) and four in live mode.
  std::size_t broker_workers = 0;
  double live_time_scale = 1.0;
  int nodes_per_job = 1;
  std::size_t tile_threshold_cells = kDefaultTileThresholdCells;
  std::vector<int> default_ladder = kDefaultLadder;
  TopoOptions topo;
  fed::CostModel mosquito_cost = fed::kMosquitoCostModel;
  fed::CostModel tda_cost{30.0, 0.0};
  edi::Fetcher fetcher = edi::default_fetch;
};

/// Incident lifecycle plus the mosquito workflow: init collects the four
/// inputs, simulate submits one job per ladder rung, mosaic stitches tile
/// rasters and submits the topological job, topo hands the diagram bundle to
/// completion, and completion applies monotone supersession.
class IncidentService {
 public:
  explicit IncidentService(ServiceOptions options = {});
  ~IncidentService();

  IncidentService(const IncidentService&) = delete;
  IncidentService& operator=(const IncidentService&) = delete;

  // Request: {kind, region, species, disease, ladder?, bucketing?, pull?}.
  std::string create_incident(const Document& request);
  std::vector<std::string> activate(const std::string& incident_id);
  void complete_incident(const std::string& incident_id);
  void cancel_incident(const std::string& incident_id);

  // Runs immediately on the incident's latest complete input set, or waits
  // for the next one.
  std::string create_scenario(const std::string& incident_id,
                              std::optional<std::vector<int>> ladder = std::nullopt);

  Document incident_json(const std::string& incident_id) const;
  Document scenario_json(const std::string& scenario_id) const;
  // The complete result set of maximal fidelity; NotFound before any.
  Document visible_result(const std::string& scenario_id) const;
  std::optional<int> visible_fidelity(const std::string& scenario_id) const;
  std::vector<ServiceEvent> events(const std::string& scenario_id, std::size_t from = 0) const;
  // Blocks until an event past `from` exists, the scenario finishes, or timeout.
  std::vector<ServiceEvent> wait_events(const std::string& scenario_id, std::size_t from,
                                        std::chrono::milliseconds timeout, bool& finished) const;
  std::vector<std::string> scenarios_of(const std::string& incident_id) const;

  // Virtual mode: alternate broker drains and federation advances until
  // nothing is left to do. Returns the number of federation events handled.
  std::size_t run_until_idle();
  // Live mode: waits for the scenario to finish.
  bool wait_finished(const std::string& scenario_id, std::chrono::milliseconds timeout) const;

  void mount(httplib::Server& server);
  // Releases blocked SSE streams.
  void stop_streams();

  // Stage handlers, registered on the broker at first activation.
  void stage_init(const workflow::Message& msg);
  void stage_simulate(const workflow::Message& msg);
  void stage_mosaic(const workflow::Message& msg);
  void stage_topo(const workflow::Message& msg);
  void stage_complete(const workflow::Message& msg);
  void stage_failed(const workflow::Message& msg);

  workflow::Broker& broker() { return *broker_; }
  edi::ExternalDataInterface& edi() { return *edi_; }
  fed::Federation& federation() { return *federation_; }
  data::DataCatalog& catalog() { return *catalog_; }
  workload::WorkloadRunner& runner() { return *runner_; }
  const ServiceOptions& options() const { return options_; }

 private:
  struct Placement {
    fed::Target target;
    std::vector<std::string> resident_ids;
    double transfer_s = 0.0;
  };

  void register_operations();
  void ensure_stages_locked();
  fed::JobOutcome execute(const fed::Job& job);
  Placement place_locked(int nodes, double est_runtime_s, const std::vector<std::string>& inputs);
  std::string resident_copy(const std::string& id, const std::string& machine) const;

  Incident& incident_locked(const std::string& id);
  const Incident& incident_locked(const std::string& id) const;
  Scenario& scenario_locked(const std::string& id);
  const Scenario& scenario_locked(const std::string& id) const;
  RungState& rung_locked(Scenario& s, int fidelity);

  std::string start_scenario_locked(Incident& inc, std::optional<std::vector<int>> ladder);
  void launch_locked(Incident& inc, Scenario& s, const std::map<std::string, std::string>& inputs);
  void emit_locked(Scenario& s, const std::string& type, Document data);
  void fail_rung_locked(Scenario& s, RungState& r, const std::string& stage,
                        const std::string& error);
  void check_finished_locked(Scenario& s);
  void log_locked(Incident& inc, const std::string& type, Document detail);
  Document result_json_locked(const Scenario& s, const RungState& r) const;
  void guard(const char* stage, const workflow::Message& msg,
             const std::function<void()>& body);

  ServiceOptions options_;
  std::unique_ptr<data::DataCatalog> catalog_;
  std::unique_ptr<workflow::Broker> broker_;
  std::unique_ptr<workload::WorkloadRunner> runner_;
  std::unique_ptr<fed::Federation> federation_;
  std::unique_ptr<edi::ExternalDataInterface> edi_;

  mutable std::mutex mutex_;
  mutable std::condition_variable events_cv_;
  std::map<std::string, Incident> incidents_;
  std::map<std::string, Scenario> scenarios_;
  std::uint64_t next_incident_ = 1;
  std::uint64_t next_scenario_ = 1;
  bool stages_registered_ = false;
  bool streams_stopped_ = false;
};

}  // namespace urgent::incident
