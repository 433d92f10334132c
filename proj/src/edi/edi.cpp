#include "urgent/edi/edi.hpp"

#include "urgent/error.hpp"
#include "urgent/util.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <regex>

namespace fs = std::filesystem;

namespace urgent::edi {

std::string default_fetch(const std::string& source) {
  static const std::regex http_url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (std::regex_match(source, m, http_url)) {
    httplib::Client client(m[1].str());
    client.set_connection_timeout(2);
    client.set_read_timeout(5);
    const std::string path = m[2].matched ? m[2].str() : "/";
    auto res = client.Get(path);
    if (!res) fail(ErrorCode::NotFound, "fetch of " + source + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      fail(ErrorCode::NotFound, "fetch of " + source + " returned " + std::to_string(res->status));
    return res->body;
  }
  const std::string path = source.rfind("file://", 0) == 0 ? source.substr(7) : source;
  return read_file(path);
}

std::string payload_content(const nlohmann::json& payload) {
  if (payload.contains("content_path")) return read_file(payload.at("content_path").get<std::string>());
  if (payload.contains("content_b64")) return base64_decode(payload.at("content_b64").get<std::string>());
  fail(ErrorCode::Validation, "payload carries no content");
}

ExternalDataInterface::ExternalDataInterface(workflow::Broker& broker, fs::path staging_root,
                                             Fetcher fetcher)
    : broker_(broker), staging_root_(std::move(staging_root)), fetcher_(std::move(fetcher)) {}

ExternalDataInterface::~ExternalDataInterface() {
  std::vector<std::shared_ptr<HandlerState>> all;
  {
    std::lock_guard lock(mutex_);
    for (auto& [name, st] : active_) all.push_back(st);
  }
  for (auto& st : all) stop_poller(*st);
}

std::string ExternalDataInterface::register_handler(EdiHandler spec) {
  require(!spec.name.empty(), "handler name must be non-empty");
  require(spec.name.find('/') == std::string::npos, "handler name must not contain '/'");
  require(!spec.target_queue.empty(), "handler needs a target queue");
  require(spec.dedup_window >= 1, "dedup window must hold at least one hash");
  if (spec.mode == Mode::Pull) {
    require(spec.pull_source.has_value() && !spec.pull_source->empty(),
            "pull handler " + spec.name + " needs a source");
    require(spec.poll_interval.has_value() && spec.poll_interval->count() > 0,
            "pull handler " + spec.name + " needs a positive poll interval");
  }
  auto state = std::make_shared<HandlerState>();
  state->spec = std::move(spec);
  const std::string name = state->spec.name;
  {
    std::lock_guard lock(mutex_);
    if (active_.count(name)) fail(ErrorCode::Conflict, "handler " + name + " already registered");
    active_.emplace(name, state);
  }
  if (state->spec.mode == Mode::Pull)
    state->poller = std::thread([this, state] { poller_loop(state); });
  return name;
}

std::shared_ptr<ExternalDataInterface::HandlerState> ExternalDataInterface::find(
    const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = active_.find(name);
  if (it == active_.end()) fail(ErrorCode::NotFound, "no active handler " + name);
  return it->second;
}

std::shared_ptr<ExternalDataInterface::HandlerState> ExternalDataInterface::find_any(
    const std::string& name) const {
  std::lock_guard lock(mutex_);
  if (auto it = active_.find(name); it != active_.end()) return it->second;
  for (auto it = retired_.rbegin(); it != retired_.rend(); ++it)
    if ((*it)->spec.name == name) return *it;
  fail(ErrorCode::NotFound, "unknown handler " + name);
}

IngestResult ExternalDataInterface::ingest(const std::string& handler_name,
                                           const std::string& content, Source source) {
  auto state = find(handler_name);
  return ingest_into(*state, content, source);
}

IngestResult ExternalDataInterface::ingest_into(HandlerState& st, const std::string& content,
                                                Source source) {
  std::lock_guard lock(st.ingest_mutex);
  if (!st.active) fail(ErrorCode::NotFound, "handler " + st.spec.name + " is deactivated");
  DataArrival arrival{st.spec.name, sha256_hex(content), content.size(), wall_clock_ms(), source,
                      false};
  if (st.recent_set.count(arrival.content_hash)) {
    arrival.deduplicated = true;
    ++st.dedup_hits;
    st.arrivals.push_back(arrival);
    return IngestResult{true, std::nullopt};
  }

  nlohmann::json payload{{"handler", st.spec.name},
                         {"incident_id", st.spec.incident_id},
                         {"hash", arrival.content_hash},
                         {"size", content.size()},
                         {"source", source == Source::Pushed ? "pushed" : "polled"},
                         {"received_at", arrival.received_at},
                         {"metadata", st.spec.metadata}};
  if (content.size() > kInlineLimitBytes) {
    const fs::path staged = staging_root_ / "edi" / st.spec.incident_id / st.spec.name /
                            (arrival.content_hash + ".bin");
    if (!fs::exists(staged)) write_file(staged, content);
    payload["content_path"] = fs::absolute(staged).string();
  } else {
    payload["content_b64"] = base64_encode(content);
  }
  const std::string id = broker_.send(st.spec.target_queue, st.spec.incident_id, std::move(payload));

  st.recent.push_back(arrival.content_hash);
  st.recent_set.insert(arrival.content_hash);
  while (st.recent.size() > st.spec.dedup_window) {
    st.recent_set.erase(st.recent_set.find(st.recent.front()));
    st.recent.pop_front();
  }
  st.arrivals.push_back(arrival);
  return IngestResult{false, id};
}

PollResult ExternalDataInterface::poll_once(const std::string& handler_name) {
  auto state = find(handler_name);
  require(state->spec.mode == Mode::Pull, "handler " + handler_name + " is not in pull mode");
  return poll_state(*state);
}

PollResult ExternalDataInterface::poll_state(HandlerState& st) {
  {
    std::lock_guard lock(st.ingest_mutex);
    ++st.polls;
  }
  std::string content;
  try {
    content = fetcher_(*st.spec.pull_source);
  } catch (const std::exception& e) {
    std::lock_guard lock(st.ingest_mutex);
    ++st.fetch_failures;
    spdlog::warn("edi handler '{}': fetch failed, retrying next interval: {}", st.spec.name,
                 e.what());
    return PollResult{false, false, std::nullopt, e.what()};
  }
  const IngestResult r = ingest_into(st, content, Source::Polled);
  return PollResult{true, r.deduplicated, r.message_id, {}};
}

void ExternalDataInterface::poller_loop(std::shared_ptr<HandlerState> state) {
  const auto interval = *state->spec.poll_interval;
  auto next = std::chrono::steady_clock::now() + interval;
  for (;;) {
    {
      std::unique_lock lock(state->wake_mutex);
      if (state->wake.wait_until(lock, next, [&] { return state->stop; })) return;
    }
    try {
      poll_state(*state);
    } catch (const std::exception& e) {
      spdlog::warn("edi handler '{}': poll error: {}", state->spec.name, e.what());
    }
    next += interval;
  }
}

void ExternalDataInterface::stop_poller(HandlerState& st) {
  {
    std::lock_guard lock(st.wake_mutex);
    st.stop = true;
  }
  st.wake.notify_all();
  if (st.poller.joinable() && st.poller.get_id() != std::this_thread::get_id()) st.poller.join();
}

std::size_t ExternalDataInterface::deactivate_handlers(const std::string& incident_id) {
  std::vector<std::shared_ptr<HandlerState>> stopped;
  {
    std::lock_guard lock(mutex_);
    for (auto it = active_.begin(); it != active_.end();) {
      if (it->second->spec.incident_id == incident_id) {
        stopped.push_back(it->second);
        retired_.push_back(it->second);
        it = active_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& st : stopped) {
    stop_poller(*st);
    std::lock_guard lock(st->ingest_mutex);
    st->active = false;
  }
  return stopped.size();
}

bool ExternalDataInterface::is_active(const std::string& handler_name) const {
  std::lock_guard lock(mutex_);
  return active_.count(handler_name) > 0;
}

std::vector<EdiHandler> ExternalDataInterface::handlers(
    const std::optional<std::string>& incident_id) const {
  std::lock_guard lock(mutex_);
  std::vector<EdiHandler> out;
  for (const auto& [name, st] : active_)
    if (!incident_id || st->spec.incident_id == *incident_id) out.push_back(st->spec);
  return out;
}

std::vector<DataArrival> ExternalDataInterface::arrivals(const std::string& handler_name) const {
  auto st = find_any(handler_name);
  std::lock_guard lock(st->ingest_mutex);
  return st->arrivals;
}

std::size_t ExternalDataInterface::dedup_count(const std::string& handler_name) const {
  auto st = find_any(handler_name);
  std::lock_guard lock(st->ingest_mutex);
  return st->dedup_hits;
}

std::size_t ExternalDataInterface::fetch_failures(const std::string& handler_name) const {
  auto st = find_any(handler_name);
  std::lock_guard lock(st->ingest_mutex);
  return st->fetch_failures;
}

std::size_t ExternalDataInterface::polls(const std::string& handler_name) const {
  auto st = find_any(handler_name);
  std::lock_guard lock(st->ingest_mutex);
  return st->polls;
}

void ExternalDataInterface::mount(httplib::Server& server) {
  server.Post(R"(/edi/push/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string name = req.matches[1];
    try {
      const IngestResult r = ingest(name, req.body, Source::Pushed);
      if (r.deduplicated) {
        res.status = 200;
        res.set_content(R"({"deduplicated": true})", "application/json");
      } else {
        res.status = 202;
        res.set_content(nlohmann::json{{"message_id", *r.message_id}}.dump(), "application/json");
      }
    } catch (const Error& e) {
      res.status = e.code() == ErrorCode::NotFound ? 404 : 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
}

}  // namespace urgent::edi
