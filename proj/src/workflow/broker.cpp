#include "urgent/workflow/broker.hpp"

#include "urgent/error.hpp"
#include "urgent/util.hpp"

#include <spdlog/spdlog.h>

namespace urgent::workflow {

void to_json(nlohmann::json& j, const Message& m) {
  j = nlohmann::json{{"id", m.id},
                     {"queue_name", m.queue_name},
                     {"incident_id", m.incident_id},
                     {"payload", m.payload},
                     {"created_at", m.created_at},
                     {"attempt", m.attempt}};
}

void from_json(const nlohmann::json& j, Message& m) {
  j.at("id").get_to(m.id);
  j.at("queue_name").get_to(m.queue_name);
  j.at("incident_id").get_to(m.incident_id);
  m.payload = j.at("payload");
  j.at("created_at").get_to(m.created_at);
  j.at("attempt").get_to(m.attempt);
}

Broker::Broker(BrokerOptions options) : options_(std::move(options)) {
  if (options_.journal_path) {
    if (options_.journal_path->has_parent_path())
      std::filesystem::create_directories(options_.journal_path->parent_path());
    journal_out_.open(*options_.journal_path, std::ios::app);
    if (!journal_out_)
      fail(ErrorCode::Integrity, "cannot open journal " + options_.journal_path->string());
  }
  const std::size_t n = options_.workers == 0 ? 1 : options_.workers;
  workers_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Broker::~Broker() { shutdown(); }

void Broker::shutdown() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && workers_.empty()) return;
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : workers_)
    if (t.joinable()) t.join();
  workers_.clear();
  idle_cv_.notify_all();
}

StageRegistration Broker::register_stage(const std::string& queue_name,
                                         const std::string& stage_name, Handler handler) {
  require(!queue_name.empty(), "queue_name must be non-empty");
  require(static_cast<bool>(handler), "handler must be callable");
  StageRegistration reg{queue_name, stage_name, std::move(handler)};
  {
    std::lock_guard lock(mutex_);
    auto& q = queues_[queue_name];
    if (q.registration)
      spdlog::info("queue '{}': stage '{}' replaced by '{}'", queue_name,
                   q.registration->stage_name, stage_name);
    q.registration = reg;
    schedule_locked(queue_name, q);
  }
  work_cv_.notify_all();
  return reg;
}

std::string Broker::send(const std::string& queue_name, const std::string& incident_id,
                         Document payload) {
  require(!queue_name.empty(), "queue_name must be non-empty");
  std::string id;
  {
    std::lock_guard lock(mutex_);
    if (stopping_) fail(ErrorCode::Rejected, "broker is shut down");
    Message msg;
    msg.id = "m-" + std::to_string(next_id_++);
    msg.queue_name = queue_name;
    msg.incident_id = incident_id;
    msg.payload = std::move(payload);
    msg.created_at = wall_clock_ms();
    id = msg.id;
    if (journal_out_.is_open()) {
      journal_out_ << nlohmann::json(msg).dump() << '\n';
      journal_out_.flush();
    }
    journal_mem_.push_back(msg);
    auto& q = queues_[queue_name];
    q.pending.push_back(std::move(msg));
    schedule_locked(queue_name, q);
  }
  work_cv_.notify_one();
  return id;
}

void Broker::schedule_locked(const std::string& name, QueueState& q) {
  if (!q.busy && !q.scheduled && q.registration && !q.pending.empty()) {
    q.scheduled = true;
    ready_.push_back(name);
  }
}

bool Broker::idle_locked() const { return ready_.empty() && in_flight_ == 0; }

void Broker::worker_loop() {
  std::unique_lock lock(mutex_);
  for (;;) {
    work_cv_.wait(lock, [this] { return stopping_ || !ready_.empty(); });
    if (stopping_) return;
    const std::string name = ready_.front();
    ready_.pop_front();
    auto& q = queues_[name];
    q.scheduled = false;
    q.busy = true;
    Message msg = std::move(q.pending.front());
    q.pending.pop_front();
    Handler handler = q.registration->handler;
    ++in_flight_;
    lock.unlock();

    std::optional<std::string> error;
    try {
      handler(msg);
    } catch (const std::exception& e) {
      error = e.what();
    } catch (...) {
      error = "unknown exception";
    }

    lock.lock();
    if (error) {
      spdlog::warn("queue '{}': message {} dead-lettered: {}", name, msg.id, *error);
      dead_.push_back(DeadLetter{std::move(msg), *error, wall_clock_ms()});
    }
    auto& q2 = queues_[name];
    q2.busy = false;
    --in_flight_;
    ++processed_;
    schedule_locked(name, q2);
    if (!ready_.empty()) work_cv_.notify_one();
    if (idle_locked()) idle_cv_.notify_all();
  }
}

DrainResult Broker::drain(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  const std::size_t before = processed_;
  const bool ok = idle_cv_.wait_for(lock, timeout, [this] {
    return idle_locked() || (stopping_ && workers_.empty());
  });
  return DrainResult{processed_ - before, !ok};
}

std::vector<DeadLetter> Broker::dead_letters(const std::optional<std::string>& queue_name) const {
  std::lock_guard lock(mutex_);
  if (!queue_name) return dead_;
  std::vector<DeadLetter> out;
  for (const auto& d : dead_)
    if (d.message.queue_name == *queue_name) out.push_back(d);
  return out;
}

std::vector<Message> Broker::journal() const {
  std::lock_guard lock(mutex_);
  return journal_mem_;
}

std::size_t Broker::parked(const std::string& queue_name) const {
  std::lock_guard lock(mutex_);
  auto it = queues_.find(queue_name);
  if (it == queues_.end() || it->second.registration) return 0;
  return it->second.pending.size();
}

std::size_t Broker::processed_total() const {
  std::lock_guard lock(mutex_);
  return processed_;
}

bool Broker::has_stage(const std::string& queue_name) const {
  std::lock_guard lock(mutex_);
  auto it = queues_.find(queue_name);
  return it != queues_.end() && it->second.registration.has_value();
}

}  // namespace urgent::workflow
