#include "urgent/data/catalog.hpp"

#include "urgent/error.hpp"
#include "urgent/util.hpp"

#include <algorithm>
#include <array>

namespace fs = std::filesystem;

namespace urgent::data {

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::Input: return "input";
    case Kind::Raster: return "raster";
    case Kind::Mosaic: return "mosaic";
    case Kind::Diagram: return "diagram";
  }
  return "input";
}

Kind kind_from_string(std::string_view text) {
  if (text == "input") return Kind::Input;
  if (text == "raster") return Kind::Raster;
  if (text == "mosaic") return Kind::Mosaic;
  if (text == "diagram") return Kind::Diagram;
  fail(ErrorCode::Validation, "unknown data kind '" + std::string(text) + "'");
}

void to_json(nlohmann::json& j, const DataEntry& e) {
  j = nlohmann::json{{"id", e.id},
                     {"filename", e.filename},
                     {"machine", e.machine},
                     {"size_bytes", e.size_bytes},
                     {"description", e.description},
                     {"incident_id", e.incident_id},
                     {"kind", to_string(e.kind)},
                     {"status", e.status == Status::Available ? "AVAILABLE" : "DELETED"},
                     {"created_at", e.created_at},
                     {"seq", e.seq}};
  if (e.copied_from) j["copied_from"] = *e.copied_from;
}

void from_json(const nlohmann::json& j, DataEntry& e) {
  j.at("id").get_to(e.id);
  j.at("filename").get_to(e.filename);
  j.at("machine").get_to(e.machine);
  j.at("size_bytes").get_to(e.size_bytes);
  j.at("description").get_to(e.description);
  j.at("incident_id").get_to(e.incident_id);
  e.kind = kind_from_string(j.at("kind").get<std::string>());
  e.status = j.at("status").get<std::string>() == "DELETED" ? Status::Deleted : Status::Available;
  j.at("created_at").get_to(e.created_at);
  j.at("seq").get_to(e.seq);
  if (j.contains("copied_from")) e.copied_from = j.at("copied_from").get<std::string>();
}

double transfer_seconds(std::int64_t size_bytes, double bandwidth_bytes_per_s) {
  require(bandwidth_bytes_per_s > 0.0, "bandwidth must be positive");
  return static_cast<double>(size_bytes) / bandwidth_bytes_per_s;
}

DataCatalog::DataCatalog(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
  const fs::path log_path = root_ / "catalogue.jsonl";
  if (fs::exists(log_path)) {
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto e = nlohmann::json::parse(line).get<DataEntry>();
      next_seq_ = std::max(next_seq_, e.seq + 1);
      entries_[e.id] = std::move(e);
    }
  }
  log_.open(log_path, std::ios::app);
  if (!log_) fail(ErrorCode::Integrity, "cannot open " + log_path.string());
}

fs::path DataCatalog::machine_dir(const std::string& machine) const {
  return root_ / "machines" / machine;
}

std::string DataCatalog::next_id_locked() { return "d-" + std::to_string(next_seq_); }

void DataCatalog::persist_locked(const DataEntry& e) {
  log_ << nlohmann::json(e).dump() << '\n';
  log_.flush();
}

std::string DataCatalog::register_file(const std::string& filename, const std::string& machine,
                                       std::int64_t size_bytes, const std::string& incident_id,
                                       Kind kind, const std::string& description) {
  require(!machine.empty(), "machine must be non-empty");
  require(size_bytes >= 0, "size_bytes must be non-negative");
  fs::path p(filename);
  if (p.is_relative()) p = machine_dir(machine) / p;
  if (!fs::is_regular_file(p)) fail(ErrorCode::NotFound, "no file at " + p.string());

  std::lock_guard lock(mutex_);
  DataEntry e;
  e.id = next_id_locked();
  e.seq = next_seq_++;
  e.filename = fs::absolute(p).lexically_normal().string();
  e.machine = machine;
  e.size_bytes = size_bytes;
  e.description = description;
  e.incident_id = incident_id;
  e.kind = kind;
  e.created_at = wall_clock_ms();
  persist_locked(e);
  const std::string id = e.id;
  entries_.emplace(id, std::move(e));
  return id;
}

std::vector<DataEntry> DataCatalog::query(const std::string& incident_id,
                                          std::optional<Kind> kind) const {
  std::vector<DataEntry> out;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, e] : entries_) {
      if (e.status != Status::Available || e.incident_id != incident_id) continue;
      if (kind && e.kind != *kind) continue;
      out.push_back(e);
    }
  }
  std::sort(out.begin(), out.end(), [](const DataEntry& a, const DataEntry& b) {
    return std::tie(a.created_at, a.seq) < std::tie(b.created_at, b.seq);
  });
  return out;
}

DataEntry DataCatalog::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorCode::NotFound, "unknown data id " + id);
  return it->second;
}

const DataEntry& DataCatalog::available_locked(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorCode::NotFound, "unknown data id " + id);
  if (it->second.status == Status::Deleted) fail(ErrorCode::Gone, "data " + id + " was deleted");
  return it->second;
}

fs::path DataCatalog::path_of(const std::string& id) const {
  fs::path p;
  {
    std::lock_guard lock(mutex_);
    p = available_locked(id).filename;
  }
  if (!fs::is_regular_file(p))
    fail(ErrorCode::Integrity, "data " + id + " missing from " + p.string());
  return p;
}

void DataCatalog::fetch(const std::string& id, const std::function<void(std::string_view)>& sink,
                        std::size_t chunk_bytes) const {
  const fs::path p = path_of(id);
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::Integrity, "cannot open " + p.string());
  std::string buf(std::max<std::size_t>(chunk_bytes, 1), '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    if (n > 0) sink(std::string_view(buf.data(), n));
  }
}

std::string DataCatalog::fetch_all(const std::string& id) const {
  std::string out;
  fetch(id, [&out](std::string_view chunk) { out.append(chunk); });
  return out;
}

CopyResult DataCatalog::copy(const std::string& id, const std::string& dest_machine,
                             double bandwidth_bytes_per_s) {
  require(!dest_machine.empty(), "destination machine must be non-empty");
  const fs::path src = path_of(id);
  DataEntry source = get(id);

  std::lock_guard lock(mutex_);
  DataEntry e = source;
  e.id = next_id_locked();
  e.seq = next_seq_++;
  const fs::path dest = machine_dir(dest_machine) / "replicas" / e.id / src.filename();
  fs::create_directories(dest.parent_path());
  fs::copy_file(src, dest, fs::copy_options::overwrite_existing);
  e.filename = fs::absolute(dest).lexically_normal().string();
  e.machine = dest_machine;
  e.status = Status::Available;
  e.created_at = wall_clock_ms();
  e.copied_from = source.copied_from.value_or(source.id);
  persist_locked(e);
  CopyResult result{e.id, dest_machine == source.machine
                              ? 0.0
                              : transfer_seconds(source.size_bytes, bandwidth_bytes_per_s)};
  entries_.emplace(e.id, std::move(e));
  return result;
}

void DataCatalog::remove(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) fail(ErrorCode::NotFound, "unknown data id " + id);
  if (it->second.status == Status::Deleted) return;
  it->second.status = Status::Deleted;
  std::error_code ec;
  fs::remove(it->second.filename, ec);
  persist_locked(it->second);
}

bool DataCatalog::resident_on(const std::string& id, const std::string& machine) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return false;
  const std::string origin = it->second.copied_from.value_or(id);
  for (const auto& [other_id, e] : entries_) {
    if (e.status != Status::Available || e.machine != machine) continue;
    if (other_id == id || other_id == origin || e.copied_from == origin) return true;
  }
  return false;
}

std::vector<DataEntry> DataCatalog::all() const {
  std::lock_guard lock(mutex_);
  std::vector<DataEntry> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

}  // namespace urgent::data
