#pragma once

#include "urgent/workflow/broker.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace urgent::edi {

enum class Mode { Push, Pull };
enum class Source { Pushed, Polled };

inline constexpr std::size_t kDefaultDedupWindow = 32;
// Content above this size is staged to disk and referenced by path.
inline constexpr std::size_t kInlineLimitBytes = 64 * 1024;

struct EdiHandler {
  std::string name;
  Mode mode = Mode::Push;
  std::string target_queue;
  std::string incident_id;
  std::optional<std::string> pull_source;  // file path, file:// or http:// URL
  std::optional<std::chrono::milliseconds> poll_interval;
  std::size_t dedup_window = kDefaultDedupWindow;
  // Copied verbatim into each message payload under "metadata".
  nlohmann::json metadata = nlohmann::json::object();
};

struct DataArrival {
  std::string handler_name;
  std::string content_hash;
  std::size_t size_bytes = 0;
  std::int64_t received_at = 0;
  Source source = Source::Pushed;
  bool deduplicated = false;
};

struct IngestResult {
  bool deduplicated = false;
  std::optional<std::string> message_id;
};

struct PollResult {
  bool fetched = false;
  bool deduplicated = false;
  std::optional<std::string> message_id;
  std::string error;
};

// Returns the current bytes at `source`; throws on failure.
using Fetcher = std::function<std::string(const std::string& source)>;

std::string default_fetch(const std::string& source);

// Recovers the bytes referenced by an EDI message payload (inline or staged).
std::string payload_content(const nlohmann::json& payload);

/// External Data Interface. PUSH handlers accept bytes through ingest() (and
/// POST /edi/push/{name} once mounted); PULL handlers poll their source on a
/// fixed cadence. Every arrival whose content hash is not among the handler's
/// last `dedup_window` hashes becomes exactly one message on target_queue.
class ExternalDataInterface {
 public:
  ExternalDataInterface(workflow::Broker& broker, std::filesystem::path staging_root,
                        Fetcher fetcher = default_fetch);
  ~ExternalDataInterface();

  ExternalDataInterface(const ExternalDataInterface&) = delete;
  ExternalDataInterface& operator=(const ExternalDataInterface&) = delete;

  std::string register_handler(EdiHandler spec);
  IngestResult ingest(const std::string& handler_name, const std::string& content,
                      Source source = Source::Pushed);
  PollResult poll_once(const std::string& handler_name);
  std::size_t deactivate_handlers(const std::string& incident_id);

  bool is_active(const std::string& handler_name) const;
  std::vector<EdiHandler> handlers(const std::optional<std::string>& incident_id = {}) const;
  std::vector<DataArrival> arrivals(const std::string& handler_name) const;
  std::size_t dedup_count(const std::string& handler_name) const;
  std::size_t fetch_failures(const std::string& handler_name) const;
  std::size_t polls(const std::string& handler_name) const;

  // POST /edi/push/{name}: 202 accepted, 200 {"deduplicated": true}, 404 unknown.
  void mount(httplib::Server& server);

 private:
  struct HandlerState {
    EdiHandler spec;
    std::mutex ingest_mutex;  // per-handler serialization keeps dedup deterministic
    std::deque<std::string> recent;
    std::multiset<std::string> recent_set;
    std::vector<DataArrival> arrivals;
    std::size_t dedup_hits = 0;
    std::size_t fetch_failures = 0;
    std::size_t polls = 0;
    bool active = true;
    std::thread poller;
    std::mutex wake_mutex;
    std::condition_variable wake;
    bool stop = false;
  };

  std::shared_ptr<HandlerState> find(const std::string& name) const;
  std::shared_ptr<HandlerState> find_any(const std::string& name) const;
  IngestResult ingest_into(HandlerState& state, const std::string& content, Source source);
  PollResult poll_state(HandlerState& state);
  void poller_loop(std::shared_ptr<HandlerState> state);
  static void stop_poller(HandlerState& state);

  workflow::Broker& broker_;
  std::filesystem::path staging_root_;
  Fetcher fetcher_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<HandlerState>> active_;
  std::vector<std::shared_ptr<HandlerState>> retired_;
};

}  // namespace urgent::edi
