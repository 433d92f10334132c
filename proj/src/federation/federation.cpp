#include "urgent/federation/federation.hpp"

#include "urgent/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace urgent::fed {

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Pending: return "PENDING";
    case JobState::Queued: return "QUEUED";
    case JobState::Running: return "RUNNING";
    case JobState::Completed: return "COMPLETED";
    case JobState::Failed: return "FAILED";
    case JobState::Cancelled: return "CANCELLED";
  }
  return "PENDING";
}

JobState job_state_from_string(std::string_view s) {
  for (auto st : {JobState::Pending, JobState::Queued, JobState::Running, JobState::Completed,
                  JobState::Failed, JobState::Cancelled})
    if (to_string(st) == s) return st;
  fail(ErrorCode::Validation, "unknown job state '" + std::string(s) + "'");
}

bool is_terminal(JobState s) {
  return s == JobState::Completed || s == JobState::Failed || s == JobState::Cancelled;
}

void to_json(nlohmann::json& j, const QueueSpec& q) {
  j = nlohmann::json{{"name", q.name},
                     {"max_nodes", q.max_nodes},
                     {"max_walltime_s", q.max_walltime_s},
                     {"priority", q.priority},
                     {"is_short", q.is_short}};
  if (q.default_wait_s) j["default_wait_s"] = *q.default_wait_s;
}

void from_json(const nlohmann::json& j, QueueSpec& q) {
  j.at("name").get_to(q.name);
  q.max_nodes = j.value("max_nodes", 1);
  q.is_short = j.value("is_short", false);
  q.max_walltime_s = j.value("max_walltime_s", q.is_short ? kShortQueueWalltimeS : 86400);
  q.priority = j.value("priority", q.is_short ? 10 : 0);
  if (j.contains("default_wait_s")) q.default_wait_s = j.at("default_wait_s").get<double>();
}

void to_json(nlohmann::json& j, const MachineSpec& m) {
  j = nlohmann::json{{"name", m.name},
                     {"total_nodes", m.total_nodes},
                     {"queues", m.queues},
                     {"bandwidth_bytes_per_s", m.bandwidth_bytes_per_s}};
}

void from_json(const nlohmann::json& j, MachineSpec& m) {
  j.at("name").get_to(m.name);
  j.at("total_nodes").get_to(m.total_nodes);
  j.at("queues").get_to(m.queues);
  m.bandwidth_bytes_per_s = j.value("bandwidth_bytes_per_s", 1e8);
}

std::vector<MachineSpec> parse_machines(const nlohmann::json& doc) {
  try {
    const auto& list = doc.is_object() ? doc.at("machines") : doc;
    return list.get<std::vector<MachineSpec>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("bad federation config: ") + e.what());
  }
}

std::vector<MachineSpec> load_machines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
  return parse_machines(nlohmann::json::parse(in));
}

nlohmann::json job_to_json(const Job& job) {
  nlohmann::json cb = nlohmann::json::object();
  for (const auto& [state, queue] : job.callbacks) cb[std::string(to_string(state))] = queue;
  return {{"id", job.id},
          {"incident_id", job.incident_id},
          {"machine", job.machine},
          {"queue", job.queue},
          {"nodes", job.nodes},
          {"requested_walltime_s", job.requested_walltime_s},
          {"state", to_string(job.state)},
          {"submit_t", job.submit_t},
          {"start_t", job.start_t},
          {"end_t", job.end_t},
          {"callbacks", cb},
          {"workload_ref", job.workload_ref},
          {"params_ref", job.params_ref},
          {"tags", job.tags},
          {"outputs", job.outputs},
          {"error", job.error}};
}

double scheduling_coefficient(double runtime_s, double queue_wait_s) {
  const double total = runtime_s + queue_wait_s;
  return total > 0.0 ? runtime_s / total : 1.0;
}

Federation::QueueRuntime& Federation::MachineRuntime::queue(const std::string& name) {
  for (auto& q : queues)
    if (q.spec.name == name) return q;
  fail(ErrorCode::NotFound, "machine " + spec.name + " has no queue " + name);
}

const Federation::QueueRuntime* Federation::MachineRuntime::find_queue(
    const std::string& name) const {
  for (const auto& q : queues)
    if (q.spec.name == name) return &q;
  return nullptr;
}

Federation::Federation(FederationOptions options, workflow::Broker* broker,
                       const data::DataCatalog* catalog)
    : options_(options), broker_(broker), catalog_(catalog) {
  require(options_.ema_alpha > 0.0 && options_.ema_alpha <= 1.0, "ema alpha must be in (0,1]");
  cost_models_["mosquito"] = kMosquitoCostModel;
}

Federation::~Federation() { stop_live(); }

std::string Federation::register_machine(const MachineSpec& spec) {
  require(!spec.name.empty(), "machine name must be non-empty");
  require(spec.total_nodes > 0, "machine " + spec.name + " must have at least one node");
  require(spec.bandwidth_bytes_per_s > 0.0, "bandwidth must be positive");
  require(!spec.queues.empty(), "machine " + spec.name + " needs at least one queue");
  std::set<std::string> names;
  int shorts = 0;
  for (const auto& q : spec.queues) {
    require(!q.name.empty(), "queue name must be non-empty");
    require(names.insert(q.name).second, "duplicate queue " + q.name + " on " + spec.name);
    require(q.max_nodes > 0 && q.max_walltime_s > 0, "queue " + q.name + " limits must be positive");
    if (q.is_short) ++shorts;
  }
  require(shorts <= 1, "machine " + spec.name + " flags more than one short queue");

  std::lock_guard lock(mutex_);
  if (machines_.count(spec.name)) fail(ErrorCode::Conflict, "machine " + spec.name + " exists");
  MachineRuntime m;
  m.spec = spec;
  m.free_nodes = spec.total_nodes;
  for (const auto& q : spec.queues) {
    QueueRuntime qr;
    qr.spec = q;
    qr.ema_wait_s = q.default_wait_s.value_or(q.is_short ? options_.short_default_wait_s
                                                          : options_.normal_default_wait_s);
    m.queues.push_back(std::move(qr));
  }
  std::sort(m.queues.begin(), m.queues.end(), [](const QueueRuntime& a, const QueueRuntime& b) {
    if (a.spec.priority != b.spec.priority) return a.spec.priority > b.spec.priority;
    return a.spec.name < b.spec.name;
  });
  machines_.emplace(spec.name, std::move(m));
  return spec.name;
}

std::vector<MachineSpec> Federation::machines() const {
  std::lock_guard lock(mutex_);
  std::vector<MachineSpec> out;
  for (const auto& [name, m] : machines_) out.push_back(m.spec);
  return out;
}

const MachineSpec& Federation::machine(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = machines_.find(name);
  if (it == machines_.end()) fail(ErrorCode::NotFound, "unknown machine " + name);
  return it->second.spec;
}

Target Federation::select_target(int nodes, double est_runtime_s,
                                 const std::vector<std::string>& input_data_ids) const {
  require(nodes > 0, "nodes must be positive");
  require(input_data_ids.empty() || catalog_ != nullptr,
          "input residency needs a data catalogue");
  std::vector<std::pair<std::string, std::int64_t>> inputs;
  for (const auto& id : input_data_ids) inputs.emplace_back(id, catalog_->get(id).size_bytes);

  std::lock_guard lock(mutex_);
  std::optional<Target> best;
  // machines_ is a std::map and queues are visited in name order, so a strict
  // '<' keeps the lexicographically first candidate on ties.
  for (const auto& [mname, m] : machines_) {
    std::int64_t missing = 0;
    for (const auto& [id, size] : inputs)
      if (!catalog_->resident_on(id, mname)) missing += size;
    const double transfer = static_cast<double>(missing) / m.spec.bandwidth_bytes_per_s;

    std::vector<const QueueRuntime*> by_name;
    for (const auto& q : m.queues) by_name.push_back(&q);
    std::sort(by_name.begin(), by_name.end(),
              [](auto* a, auto* b) { return a->spec.name < b->spec.name; });
    for (const auto* q : by_name) {
      if (nodes > q->spec.max_nodes || nodes > m.spec.total_nodes) continue;
      if (est_runtime_s > static_cast<double>(q->spec.max_walltime_s)) continue;
      const double cost = q->ema_wait_s + est_runtime_s + transfer;
      if (!best || cost < best->cost_s) best = Target{mname, q->spec.name, cost, q->ema_wait_s, transfer};
    }
  }
  if (!best)
    fail(ErrorCode::NoCapacity, "no queue accepts " + std::to_string(nodes) + " nodes for " +
                                    std::to_string(est_runtime_s) + " s");
  return *best;
}

void Federation::push_event(double t, EventType type, const std::string& job_id) {
  events_.push(Event{t, next_seq_++, type, job_id});
}

void Federation::transition_locked(JobRuntime& jr, JobState to, double t) {
  const JobState from = jr.job.state;
  const bool ok = (from == JobState::Pending && to == JobState::Queued) ||
                  (from == JobState::Queued && to == JobState::Running) ||
                  (from == JobState::Running &&
                   (to == JobState::Completed || to == JobState::Failed)) ||
                  (!is_terminal(from) && to == JobState::Cancelled);
  if (!ok)
    throw std::logic_error("illegal job transition " + std::string(to_string(from)) + " -> " +
                           std::string(to_string(to)));
  jr.job.state = to;
  for (const auto& l : listeners_) l(jr.job, from, to, t);
  auto cb = jr.job.callbacks.find(to);
  if (cb != jr.job.callbacks.end()) {
    Document payload{{"job_id", jr.job.id},
                     {"state", to_string(to)},
                     {"machine", jr.job.machine},
                     {"queue", jr.job.queue},
                     {"t", t},
                     {"outputs", jr.job.outputs},
                     {"error", jr.job.error},
                     {"tags", jr.job.tags}};
    outgoing_.push_back(Outgoing{cb->second, jr.job.incident_id, std::move(payload)});
  }
}

void Federation::try_schedule_locked(MachineRuntime& m, double t) {
  for (;;) {
    QueueRuntime* head_queue = nullptr;
    for (auto& q : m.queues) {
      if (!q.fifo.empty()) {
        head_queue = &q;
        break;
      }
    }
    if (!head_queue) return;
    auto& jr = jobs_.at(head_queue->fifo.front());
    if (jr.job.nodes > m.free_nodes) return;  // strict priority: no backfill
    m.free_nodes -= jr.job.nodes;
    jr.reserved = true;
    head_queue->fifo.pop_front();
    push_event(t, EventType::Start, jr.job.id);
  }
}

void Federation::release_nodes_locked(JobRuntime& jr) {
  if (!jr.reserved) return;
  machines_.at(jr.job.machine).free_nodes += jr.job.nodes;
  jr.reserved = false;
}

void Federation::finish_locked(JobRuntime& jr, const JobOutcome& outcome, double t) {
  jr.job.end_t = t;
  jr.job.outputs = outcome.outputs;
  jr.job.error = outcome.error;
  release_nodes_locked(jr);
  transition_locked(jr, outcome.ok ? JobState::Completed : JobState::Failed, t);
  if (outcome.ok) {
    const double runtime = jr.job.end_t - jr.job.start_t;
    const double wait = jr.job.start_t - jr.job.queued_t;
    records_.push_back(SchedulingRecord{jr.job.id, jr.job.nodes, runtime, wait,
                                        scheduling_coefficient(runtime, wait)});
  }
  try_schedule_locked(machines_.at(jr.job.machine), t);
}

std::string Federation::submit(Job job) {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    auto mit = machines_.find(job.machine);
    if (mit == machines_.end()) fail(ErrorCode::NotFound, "unknown machine " + job.machine);
    auto& m = mit->second;
    const QueueRuntime* q = m.find_queue(job.queue);
    if (!q) fail(ErrorCode::NotFound, "machine " + job.machine + " has no queue " + job.queue);
    if (job.nodes < 1 || job.nodes > q->spec.max_nodes || job.nodes > m.spec.total_nodes)
      fail(ErrorCode::Rejected, "queue " + job.queue + " does not accept " +
                                    std::to_string(job.nodes) + " nodes");
    if (job.requested_walltime_s <= 0) job.requested_walltime_s = q->spec.max_walltime_s;
    if (job.requested_walltime_s > q->spec.max_walltime_s)
      fail(ErrorCode::Rejected, "walltime " + std::to_string(job.requested_walltime_s) +
                                    " s exceeds queue " + job.queue + " cap");

    id = "j-" + std::to_string(next_job_++);
    job.id = id;
    job.state = JobState::Pending;
    job.submit_t = now_;
    job.start_t = job.end_t = job.queued_t = 0.0;
    job.outputs.clear();
    job.error.clear();
    const double release = job.release_t;
    auto& jr = jobs_[id];
    jr.job = std::move(job);
    job_order_.push_back(id);
    if (release > now_) {
      push_event(release, EventType::Release, id);
    } else {
      jr.job.queued_t = now_;
      transition_locked(jr, JobState::Queued, now_);
      m.queue(jr.job.queue).fifo.push_back(id);
      try_schedule_locked(m, now_);
    }
  }
  flush_outgoing();
  return id;
}

std::size_t Federation::advance(double until) {
  std::lock_guard advance_lock(advance_mutex_);
  std::size_t processed = 0;
  {
    std::unique_lock lock(mutex_);
    require(until >= now_, "cannot advance backwards");
    for (auto& c : completions_) {
      auto it = jobs_.find(c.job_id);
      if (it == jobs_.end() || it->second.job.state != JobState::Running) continue;
      it->second.outcome = std::move(c.outcome);
      push_event(std::max(until, it->second.job.start_t), EventType::End, c.job_id);
    }
    completions_.clear();

    while (!events_.empty() && events_.top().t <= until) {
      Event e = events_.top();
      events_.pop();
      now_ = e.t;
      if (e.type == EventType::Transfer) {
        ++processed;
        continue;
      }
      auto& jr = jobs_.at(e.job_id);
      switch (e.type) {
        case EventType::Release: {
          if (jr.job.state != JobState::Pending) break;
          jr.job.queued_t = e.t;
          transition_locked(jr, JobState::Queued, e.t);
          auto& m = machines_.at(jr.job.machine);
          m.queue(jr.job.queue).fifo.push_back(jr.job.id);
          try_schedule_locked(m, e.t);
          ++processed;
          break;
        }
        case EventType::Start: {
          if (jr.job.state != JobState::Queued || !jr.reserved) break;
          ++processed;
          jr.job.start_t = e.t;
          auto& q = machines_.at(jr.job.machine).queue(jr.job.queue);
          const double wait = e.t - jr.job.queued_t;
          q.ema_wait_s = options_.ema_alpha * wait + (1.0 - options_.ema_alpha) * q.ema_wait_s;
          transition_locked(jr, JobState::Running, e.t);
          const Job snapshot = jr.job;
          if (options_.mode == ClockMode::Live) {
            ++live_running_;
            JobExecutor exec = executor_;
            live_workers_.emplace_back([this, exec, snapshot] {
              JobOutcome out = exec ? exec(snapshot) : JobOutcome{};
              std::lock_guard l(mutex_);
              completions_.push_back(Completion{snapshot.id, std::move(out)});
              --live_running_;
            });
            break;
          }
          JobOutcome out;
          if (executor_) {
            JobExecutor exec = executor_;
            lock.unlock();
            try {
              out = exec(snapshot);
            } catch (const std::exception& ex) {
              out = JobOutcome{false, {}, ex.what()};
            }
            lock.lock();
          }
          auto& jr2 = jobs_.at(snapshot.id);
          if (jr2.job.state != JobState::Running) break;  // cancelled meanwhile
          double duration = jr2.job.runtime_s;
          const auto wall = static_cast<double>(jr2.job.requested_walltime_s);
          if (duration > wall) {
            duration = wall;
            out = JobOutcome{false, out.outputs, "walltime exceeded"};
          }
          jr2.outcome = std::move(out);
          push_event(e.t + duration, EventType::End, snapshot.id);
          break;
        }
        case EventType::End: {
          if (jr.job.state != JobState::Running) break;
          ++processed;
          finish_locked(jr, jr.outcome.value_or(JobOutcome{}), e.t);
          break;
        }
        case EventType::Transfer: break;
      }
    }
    now_ = until;
  }
  flush_outgoing();
  return processed;
}

JobState Federation::cancel(const std::string& job_id) {
  JobState prior;
  {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) fail(ErrorCode::NotFound, "unknown job " + job_id);
    auto& jr = it->second;
    prior = jr.job.state;
    if (is_terminal(prior)) return prior;
    auto& m = machines_.at(jr.job.machine);
    auto& fifo = m.queue(jr.job.queue).fifo;
    fifo.erase(std::remove(fifo.begin(), fifo.end(), job_id), fifo.end());
    release_nodes_locked(jr);
    jr.job.end_t = now_;
    transition_locked(jr, JobState::Cancelled, now_);
    try_schedule_locked(m, now_);
  }
  flush_outgoing();
  return prior;
}

double Federation::schedule_transfer(double seconds) {
  require(seconds >= 0.0, "transfer duration must be non-negative");
  std::lock_guard lock(mutex_);
  const double t = now_ + seconds;
  push_event(t, EventType::Transfer, {});
  return t;
}

void Federation::flush_outgoing() {
  std::vector<Outgoing> out;
  {
    std::lock_guard lock(mutex_);
    out.swap(outgoing_);
  }
  if (!broker_) return;
  for (auto& o : out) {
    try {
      broker_->send(o.queue, o.incident_id, std::move(o.payload));
    } catch (const Error& e) {
      spdlog::warn("callback to '{}' dropped: {}", o.queue, e.what());
    }
  }
}

double Federation::now() const {
  std::lock_guard lock(mutex_);
  return now_;
}

std::optional<double> Federation::next_event_time() const {
  std::lock_guard lock(mutex_);
  if (events_.empty()) return std::nullopt;
  return events_.top().t;
}

bool Federation::busy() const {
  std::lock_guard lock(mutex_);
  return !events_.empty() || live_running_ > 0 || !completions_.empty();
}

Job Federation::job(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) fail(ErrorCode::NotFound, "unknown job " + id);
  return it->second.job;
}

std::vector<Job> Federation::jobs() const {
  std::lock_guard lock(mutex_);
  std::vector<Job> out;
  for (const auto& id : job_order_) out.push_back(jobs_.at(id).job);
  return out;
}

std::vector<SchedulingRecord> Federation::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

double Federation::wait_estimate(const std::string& machine, const std::string& queue) const {
  std::lock_guard lock(mutex_);
  auto it = machines_.find(machine);
  if (it == machines_.end()) fail(ErrorCode::NotFound, "unknown machine " + machine);
  const auto* q = it->second.find_queue(queue);
  if (!q) fail(ErrorCode::NotFound, "unknown queue " + queue);
  return q->ema_wait_s;
}

void Federation::set_cost_model(const std::string& workload_kind, CostModel model) {
  require(model.t_fixed >= 0.0 && model.t_member >= 0.0, "cost model terms must be non-negative");
  std::lock_guard lock(mutex_);
  cost_models_[workload_kind] = model;
}

double Federation::estimate_runtime(const std::string& workload_kind, int n_members) const {
  require(n_members >= 1, "n_members must be at least 1");
  std::lock_guard lock(mutex_);
  auto it = cost_models_.find(workload_kind);
  if (it == cost_models_.end()) fail(ErrorCode::NotFound, "no cost model for " + workload_kind);
  return it->second.t_fixed + it->second.t_member * n_members;
}

void Federation::set_executor(JobExecutor executor) {
  std::lock_guard lock(mutex_);
  executor_ = std::move(executor);
}

void Federation::add_transition_listener(TransitionListener listener) {
  std::lock_guard lock(mutex_);
  listeners_.push_back(std::move(listener));
}

double Federation::virtual_now_live() const {
  const std::chrono::duration<double> real = std::chrono::steady_clock::now() - live_epoch_;
  return live_epoch_virtual_ + real.count() * options_.live_time_scale;
}

void Federation::start_live() {
  require(options_.mode == ClockMode::Live, "start_live needs live clock mode");
  if (live_driver_.joinable()) return;
  {
    std::lock_guard lock(mutex_);
    live_epoch_ = std::chrono::steady_clock::now();
    live_epoch_virtual_ = now_;
  }
  live_stop_ = false;
  live_driver_ = std::thread([this] { live_loop(); });
}

void Federation::live_loop() {
  while (!live_stop_) {
    std::this_thread::sleep_for(options_.live_tick);
    const double target = virtual_now_live();
    if (target >= now()) advance(target);
  }
}

void Federation::stop_live() {
  live_stop_ = true;
  if (live_driver_.joinable()) live_driver_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mutex_);
    workers.swap(live_workers_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
}

nlohmann::json Federation::state_json() const {
  std::lock_guard lock(mutex_);
  nlohmann::json machines = nlohmann::json::array();
  for (const auto& [name, m] : machines_) {
    nlohmann::json queues = nlohmann::json::array();
    for (const auto& q : m.queues) {
      nlohmann::json qj = q.spec;
      qj["queued"] = q.fifo.size();
      qj["ema_wait_s"] = q.ema_wait_s;
      queues.push_back(std::move(qj));
    }
    std::size_t running = 0;
    for (const auto& [id, jr] : jobs_)
      if (jr.job.machine == name && jr.job.state == JobState::Running) ++running;
    machines.push_back({{"name", name},
                        {"total_nodes", m.spec.total_nodes},
                        {"free_nodes", m.free_nodes},
                        {"running_jobs", running},
                        {"bandwidth_bytes_per_s", m.spec.bandwidth_bytes_per_s},
                        {"queues", std::move(queues)}});
  }
  return {{"now", now_}, {"machines", std::move(machines)}};
}

}  // namespace urgent::fed
