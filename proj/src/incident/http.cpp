#include "urgent/incident/service.hpp"

#include "urgent/error.hpp"
#include "urgent/federation/matrix.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <sstream>

namespace urgent::incident {

namespace {

int status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation:
    case ErrorCode::Precondition: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::Gone: return 410;
    case ErrorCode::Rejected:
    case ErrorCode::EmptyDomain: return 422;
    case ErrorCode::NoCapacity: return 503;
    case ErrorCode::Integrity: return 500;
  }
  return 500;
}

void send_json(httplib::Response& res, int status, const Document& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Wraps a route so domain errors map onto HTTP status codes.
httplib::Server::Handler route(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_json(res, status_of(e.code()), {{"error", e.what()}, {"code", to_string(e.code())}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", e.what()}, {"code", "validation"}});
    }
  };
}

Document body_json(const httplib::Request& req) {
  if (req.body.empty()) return Document::object();
  try {
    return Document::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Validation, std::string("request body is not JSON: ") + e.what());
  }
}

std::vector<double> bucket_param(const httplib::Request& req, const char* key,
                                 std::vector<double> fallback) {
  if (!req.has_param(key)) return fallback;
  std::vector<double> out;
  std::stringstream in(req.get_param_value(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorCode::Validation, std::string("bad bucket value in ") + key);
    }
  }
  return out;
}

std::string sse_frame(const ServiceEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

}  // namespace

void IncidentService::mount(httplib::Server& server) {
  server.Post("/incidents", route([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = create_incident(body_json(req));
    send_json(res, 201, {{"id", id}, {"status", "PENDING"}});
  }));

  server.Post(R"(/incidents/([^/]+)/activate)",
              route([this](const httplib::Request& req, httplib::Response& res) {
                const auto handlers = activate(req.matches[1]);
                send_json(res, 200, {{"id", req.matches[1]}, {"status", "ACTIVE"}, {"handlers", handlers}});
              }));

  server.Post(R"(/incidents/([^/]+)/complete)",
              route([this](const httplib::Request& req, httplib::Response& res) {
                complete_incident(req.matches[1]);
                send_json(res, 200, {{"id", req.matches[1]}, {"status", "COMPLETE"}});
              }));

  server.Post(R"(/incidents/([^/]+)/cancel)",
              route([this](const httplib::Request& req, httplib::Response& res) {
                cancel_incident(req.matches[1]);
                send_json(res, 200, {{"id", req.matches[1]}, {"status", "CANCELLED"}});
              }));

  server.Post(R"(/incidents/([^/]+)/scenarios)",
              route([this](const httplib::Request& req, httplib::Response& res) {
                const Document body = body_json(req);
                std::optional<std::vector<int>> ladder;
                if (body.contains("ladder")) ladder = body.at("ladder").get<std::vector<int>>();
                const std::string sid = create_scenario(req.matches[1], ladder);
                send_json(res, 201, {{"scenario_id", sid}});
              }));

  server.Get(R"(/incidents/([^/]+))", route([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, incident_json(req.matches[1]));
             }));

  server.Get(R"(/scenarios/([^/]+)/result)",
             route([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, visible_result(req.matches[1]));
             }));

  server.Get(R"(/scenarios/([^/]+))", route([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, scenario_json(req.matches[1]));
             }));

  server.Get(R"(/scenarios/([^/]+)/events)",
             route([this](const httplib::Request& req, httplib::Response& res) {
               const std::string sid = req.matches[1];
               events(sid);  // 404 before the stream opens
               std::size_t start = 0;
               if (req.has_header("Last-Event-ID"))
                 start = std::stoul(req.get_header_value("Last-Event-ID")) + 1;
               auto cursor = std::make_shared<std::size_t>(start);
               res.set_header("Cache-Control", "no-cache");
               res.set_chunked_content_provider(
                   "text/event-stream", [this, sid, cursor](std::size_t, httplib::DataSink& sink) {
                     bool finished = false;
                     const auto batch = wait_events(sid, *cursor, std::chrono::seconds(1), finished);
                     for (const auto& e : batch) {
                       const std::string frame = sse_frame(e);
                       if (!sink.write(frame.data(), frame.size())) return false;
                       *cursor = e.seq + 1;
                     }
                     if (finished && events(sid, *cursor).empty()) {
                       sink.done();
                       return true;
                     }
                     if (batch.empty()) {
                       static constexpr char kPing[] = ": ping\n\n";
                       if (!sink.write(kPing, sizeof(kPing) - 1)) return false;
                     }
                     return true;
                   });
             }));

  server.Get(R"(/data/([^/]+))", route([this](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const data::DataEntry entry = catalog_->get(id);
               catalog_->path_of(id);  // Gone / Integrity before streaming starts
               res.set_header("X-Data-Kind", std::string(data::to_string(entry.kind)));
               res.set_header("X-Data-Machine", entry.machine);
               res.set_chunked_content_provider(
                   "application/octet-stream", [this, id](std::size_t, httplib::DataSink& sink) {
                     try {
                       catalog_->fetch(id, [&sink](std::string_view chunk) {
                         if (!sink.write(chunk.data(), chunk.size()))
                           fail(ErrorCode::Integrity, "client went away");
                       });
                     } catch (const Error& e) {
                       spdlog::warn("streaming {} stopped: {}", id, e.what());
                       return false;
                     }
                     sink.done();
                     return true;
                   });
             }));

  server.Get("/data", route([this](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("incident")) fail(ErrorCode::Validation, "query needs ?incident=");
               std::optional<data::Kind> kind;
               if (req.has_param("kind")) kind = data::kind_from_string(req.get_param_value("kind"));
               send_json(res, 200, catalog_->query(req.get_param_value("incident"), kind));
             }));

  server.Get("/machines", route([this](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, federation_->state_json());
             }));

  server.Get("/metrics/scheduling-matrix",
             route([this](const httplib::Request& req, httplib::Response& res) {
               const auto matrix = fed::scheduling_matrix(
                   federation_->records(), bucket_param(req, "nodes", {1, 2, 4, 8, 16, 64, 256}),
                   bucket_param(req, "hours", {0.25, 0.5, 1, 2, 6, 12, 24}));
               if (req.get_param_value("format") == "csv") {
                 res.status = 200;
                 res.set_content(matrix.to_csv(), "text/csv");
               } else {
                 send_json(res, 200, matrix.to_json());
               }
             }));

  edi_->mount(server);
}

}  // namespace urgent::incident
