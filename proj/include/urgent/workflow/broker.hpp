#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <deque>
#include <string>
#include <thread>
#include <vector>

namespace urgent::workflow {

using Document = nlohmann::json;

struct Message {
  std::string id;
  std::string queue_name;
  std::string incident_id;
  Document payload;
  std::int64_t created_at = 0;  // ms since epoch
  int attempt = 1;
};

void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);

using Handler = std::function<void(const Message&)>;

struct StageRegistration {
  std::string queue_name;
  std::string stage_name;
  Handler handler;
};

struct DeadLetter {
  Message message;
  std::string error_text;
  std::int64_t failed_at = 0;
};

struct DrainResult {
  std::size_t processed = 0;
  bool timed_out = false;
};

struct BrokerOptions {
  std::size_t workers = 4;
  // Line-delimited JSON journal; every accepted message is appended before dispatch.
  std::optional<std::filesystem::path> journal_path;
};

/// In-process message broker. Each named queue activates the stage registered
/// against it; different queues run concurrently on a worker pool while a
/// single queue is strictly serialized and FIFO. Messages sent to a queue with
/// no registration are parked until a stage is registered.
///
/// Handler exceptions are captured as dead letters; nothing is redelivered.
class Broker {
 public:
  explicit Broker(BrokerOptions options = {});
  ~Broker();

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  StageRegistration register_stage(const std::string& queue_name,
                                   const std::string& stage_name, Handler handler);

  // Thread-safe, callable from inside handlers. Throws Rejected after shutdown.
  std::string send(const std::string& queue_name, const std::string& incident_id,
                   Document payload);

  // Blocks until no dispatchable message is queued and no handler runs.
  // Parked messages (no registration) do not hold drain open.
  DrainResult drain(std::chrono::milliseconds timeout);

  std::vector<DeadLetter> dead_letters(
      const std::optional<std::string>& queue_name = std::nullopt) const;

  // In-memory mirror of the journal, in acceptance order.
  std::vector<Message> journal() const;

  std::size_t parked(const std::string& queue_name) const;
  std::size_t processed_total() const;
  bool has_stage(const std::string& queue_name) const;

  // Stops accepting sends; waits for in-flight handlers; discards queued messages.
  void shutdown();

 private:
  struct QueueState {
    std::deque<Message> pending;
    std::optional<StageRegistration> registration;
    bool busy = false;
    bool scheduled = false;
  };

  void worker_loop();
  void schedule_locked(const std::string& name, QueueState& q);
  bool idle_locked() const;

  BrokerOptions options_;
  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, QueueState> queues_;
  std::deque<std::string> ready_;
  std::vector<DeadLetter> dead_;
  std::vector<Message> journal_mem_;
  std::ofstream journal_out_;
  std::uint64_t next_id_ = 1;
  std::size_t in_flight_ = 0;
  std::size_t processed_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace urgent::workflow
