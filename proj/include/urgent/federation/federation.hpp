#pragma once

#include "urgent/data/catalog.hpp"
#include "urgent/workflow/broker.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

namespace urgent::fed {

using Document = nlohmann::json;

inline constexpr std::int64_t kShortQueueWalltimeS = 1200;

struct QueueSpec {
  std::string name;
  int max_nodes = 1;
  std::int64_t max_walltime_s = kShortQueueWalltimeS;
  int priority = 0;  // higher is scheduled first
  bool is_short = false;
  // Prior for the wait model; falls back to FederationOptions defaults.
  std::optional<double> default_wait_s;
};

struct MachineSpec {
  std::string name;
  int total_nodes = 1;
  std::vector<QueueSpec> queues;
  double bandwidth_bytes_per_s = 1e8;
};

void to_json(nlohmann::json& j, const QueueSpec& q);
void from_json(const nlohmann::json& j, QueueSpec& q);
void to_json(nlohmann::json& j, const MachineSpec& m);
void from_json(const nlohmann::json& j, MachineSpec& m);

// Federation config file: a JSON array of MachineSpec (or {"machines": [...]}).
std::vector<MachineSpec> load_machines(const std::filesystem::path& path);
std::vector<MachineSpec> parse_machines(const nlohmann::json& doc);

enum class JobState { Pending, Queued, Running, Completed, Failed, Cancelled };

std::string_view to_string(JobState s);
JobState job_state_from_string(std::string_view s);
bool is_terminal(JobState s);

struct Job {
  std::string id;
  std::string incident_id;
  std::string machine;
  std::string queue;
  int nodes = 1;
  std::int64_t requested_walltime_s = 0;
  JobState state = JobState::Pending;
  double submit_t = 0.0;
  double queued_t = 0.0;
  double start_t = 0.0;
  double end_t = 0.0;
  std::map<JobState, std::string> callbacks;  // state -> workflow queue name
  std::string workload_ref;
  std::string params_ref;

  // Pure-virtual mode: compute duration charged once the job starts.
  double runtime_s = 0.0;
  // Held PENDING until this virtual time (e.g. input staging); 0 = immediately.
  double release_t = 0.0;
  // Opaque fields copied into every callback payload.
  Document tags = Document::object();

  std::vector<std::string> outputs;
  std::string error;
};

nlohmann::json job_to_json(const Job& job);

struct SchedulingRecord {
  std::string job_id;
  int nodes = 0;
  double runtime_s = 0.0;
  double queue_wait_s = 0.0;
  double coefficient = 1.0;
};

// runtime / (runtime + wait); 1 for a job that neither waited nor ran.
double scheduling_coefficient(double runtime_s, double queue_wait_s);

struct CostModel {
  double t_fixed = 0.0;
  double t_member = 0.0;
};

// Linear fit of the measured 10/1000/3000-member totals (86, 398, 1803 s).
inline constexpr CostModel kMosquitoCostModel{80.3, 0.574};

enum class ClockMode { Virtual, Live };

struct JobOutcome {
  bool ok = true;
  std::vector<std::string> outputs;
  std::string error;
};

// Runs a job's workload when it starts. Pure-virtual mode calls it inline;
// live mode runs it on its own thread and completes the job when it returns.
using JobExecutor = std::function<JobOutcome(const Job&)>;

using TransitionListener =
    std::function<void(const Job&, JobState from, JobState to, double t)>;

struct FederationOptions {
  ClockMode mode = ClockMode::Virtual;
  double ema_alpha = 0.3;
  double short_default_wait_s = 60.0;
  double normal_default_wait_s = 1800.0;
  // Live mode: virtual seconds elapsed per real second, and driver tick.
  double live_time_scale = 1.0;
  std::chrono::milliseconds live_tick{5};
};

struct Target {
  std::string machine;
  std::string queue;
  double cost_s = 0.0;
  double wait_s = 0.0;
  double transfer_s = 0.0;
};

/// The Simulation Manager and the simulated machines beneath it: a single
/// discrete-event loop per federation with strict priority-then-FIFO queues
/// (no backfill, no preemption). Transition callbacks are posted to the
/// broker once the mutating call has finished, in event order.
class Federation {
 public:
  explicit Federation(FederationOptions options = {}, workflow::Broker* broker = nullptr,
                      const data::DataCatalog* catalog = nullptr);
  ~Federation();

  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  std::string register_machine(const MachineSpec& spec);
  std::vector<MachineSpec> machines() const;
  const MachineSpec& machine(const std::string& name) const;

  Target select_target(int nodes, double est_runtime_s,
                       const std::vector<std::string>& input_data_ids = {}) const;

  std::string submit(Job job);
  std::size_t advance(double until);
  JobState cancel(const std::string& job_id);

  // Adds a standalone transfer event ending `seconds` from now; returns its time.
  double schedule_transfer(double seconds);

  double now() const;
  std::optional<double> next_event_time() const;
  bool busy() const;  // events pending or live jobs executing

  Job job(const std::string& id) const;
  std::vector<Job> jobs() const;
  std::vector<SchedulingRecord> records() const;
  double wait_estimate(const std::string& machine, const std::string& queue) const;

  void set_cost_model(const std::string& workload_kind, CostModel model);
  double estimate_runtime(const std::string& workload_kind, int n_members) const;

  void set_executor(JobExecutor executor);
  // Listeners run on the event loop with the federation lock held; they must
  // not call back into the federation.
  void add_transition_listener(TransitionListener listener);

  // Live mode driver: advances virtual time at live_time_scale.
  void start_live();
  void stop_live();

  nlohmann::json state_json() const;

 private:
  enum class EventType { Release, Start, End, Transfer };
  struct Event {
    double t;
    std::uint64_t seq;
    EventType type;
    std::string job_id;
    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };
  struct QueueRuntime {
    QueueSpec spec;
    std::deque<std::string> fifo;
    double ema_wait_s = 0.0;
  };
  struct MachineRuntime {
    MachineSpec spec;
    int free_nodes = 0;
    std::vector<QueueRuntime> queues;  // ordered by (priority desc, name asc)
    QueueRuntime& queue(const std::string& name);
    const QueueRuntime* find_queue(const std::string& name) const;
  };
  struct JobRuntime {
    Job job;
    bool reserved = false;
    std::optional<JobOutcome> outcome;
  };
  struct Outgoing {
    std::string queue;
    std::string incident_id;
    Document payload;
  };

  void push_event(double t, EventType type, const std::string& job_id);
  void transition_locked(JobRuntime& jr, JobState to, double t);
  void try_schedule_locked(MachineRuntime& m, double t);
  void release_nodes_locked(JobRuntime& jr);
  void finish_locked(JobRuntime& jr, const JobOutcome& outcome, double t);
  void flush_outgoing();
  double virtual_now_live() const;
  void live_loop();

  FederationOptions options_;
  workflow::Broker* broker_;
  const data::DataCatalog* catalog_;

  mutable std::mutex mutex_;
  std::mutex advance_mutex_;
  std::map<std::string, MachineRuntime> machines_;
  std::map<std::string, JobRuntime> jobs_;
  std::vector<std::string> job_order_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<SchedulingRecord> records_;
  std::map<std::string, CostModel> cost_models_;
  std::vector<TransitionListener> listeners_;
  std::vector<Outgoing> outgoing_;
  JobExecutor executor_;
  double now_ = 0.0;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_job_ = 1;

  // live mode
  struct Completion {
    std::string job_id;
    JobOutcome outcome;
  };
  std::vector<Completion> completions_;
  std::vector<std::thread> live_workers_;
  std::size_t live_running_ = 0;
  std::thread live_driver_;
  std::atomic<bool> live_stop_{false};
  std::chrono::steady_clock::time_point live_epoch_;
  double live_epoch_virtual_ = 0.0;
};

}  // namespace urgent::fed
