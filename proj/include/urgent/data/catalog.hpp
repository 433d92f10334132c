#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace urgent::data {

enum class Kind { Input, Raster, Mosaic, Diagram };
enum class Status { Available, Deleted };

std::string_view to_string(Kind kind);
Kind kind_from_string(std::string_view text);

struct DataEntry {
  std::string id;
  std::string filename;  // absolute path of the bytes
  std::string machine;   // logical location; "control" is the service host
  std::int64_t size_bytes = 0;
  std::string description;
  std::string incident_id;
  Kind kind = Kind::Input;
  Status status = Status::Available;
  std::int64_t created_at = 0;  // ms since epoch
  std::uint64_t seq = 0;        // registration order
  std::optional<std::string> copied_from;
};

void to_json(nlohmann::json& j, const DataEntry& e);
void from_json(const nlohmann::json& j, DataEntry& e);

inline constexpr std::string_view kControlMachine = "control";

// size / bandwidth, in seconds.
double transfer_seconds(std::int64_t size_bytes, double bandwidth_bytes_per_s);

struct CopyResult {
  std::string id;
  double transfer_s = 0.0;
};

/// The Data Manager: a catalogue of where files live and whether they are
/// still available. It never keeps file bytes itself; fetch streams from the
/// recorded location. Machines are directories under a single root.
class DataCatalog {
 public:
  // Entries are appended to `root/catalogue.jsonl` and replayed on construction.
  explicit DataCatalog(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path machine_dir(const std::string& machine) const;

  // Relative filenames resolve against machine_dir(machine). NotFound if absent.
  std::string register_file(const std::string& filename, const std::string& machine,
                            std::int64_t size_bytes, const std::string& incident_id,
                            Kind kind, const std::string& description);

  // AVAILABLE entries of an incident ordered by creation.
  std::vector<DataEntry> query(const std::string& incident_id,
                               std::optional<Kind> kind = std::nullopt) const;

  DataEntry get(const std::string& id) const;

  // Streams the bytes in chunks. Gone after delete; Integrity if the file vanished.
  void fetch(const std::string& id, const std::function<void(std::string_view)>& sink,
             std::size_t chunk_bytes = 1 << 16) const;
  std::string fetch_all(const std::string& id) const;

  // Local path of an AVAILABLE entry; same errors as fetch.
  std::filesystem::path path_of(const std::string& id) const;

  CopyResult copy(const std::string& id, const std::string& dest_machine,
                  double bandwidth_bytes_per_s);

  // Marks DELETED and removes the file. Repeated calls are no-ops.
  void remove(const std::string& id);

  // True if the entry, or an AVAILABLE copy of it, is located on `machine`.
  bool resident_on(const std::string& id, const std::string& machine) const;

  std::vector<DataEntry> all() const;

 private:
  const DataEntry& available_locked(const std::string& id) const;
  std::string next_id_locked();
  void persist_locked(const DataEntry& e);

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, DataEntry> entries_;
  std::ofstream log_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace urgent::data
