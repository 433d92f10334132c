#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace urgent::workload {

using Document = nlohmann::json;

enum class Scope { Run, Machine };

// Flat string -> scalar map.
struct ParameterDocument {
  std::string id;
  Scope scope = Scope::Run;
  Document values = Document::object();
};

struct Step {
  std::string name;
  std::string operation;
  Document param_template = Document::object();  // strings may hold ${key} references
};

struct WorkloadDescription {
  std::string id;
  std::vector<Step> steps;
};

struct StepOutcome {
  std::string step;
  std::string operation;
  bool ok = false;
  std::vector<std::string> produced;  // data ids
  std::string error;
};

// Receives resolved params and the job's private working directory; returns
// the data ids it produced. Throwing fails the step.
using Operation =
    std::function<std::vector<std::string>(const Document& params, const std::filesystem::path& workdir)>;

/// Substitutes ${key} references in every string of `tmpl`. A string that is
/// exactly one reference takes the parameter's own type; otherwise values are
/// spliced as text. RUN values override MACHINE values. Throws Validation
/// naming every missing key.
Document resolve(const Document& tmpl, const ParameterDocument& run_params,
                 const ParameterDocument& machine_params);

WorkloadDescription description_from_json(const Document& j);
Document description_to_json(const WorkloadDescription& d);
ParameterDocument parameters_from_json(const Document& j);
Document parameters_to_json(const ParameterDocument& p);

WorkloadDescription load_description(const std::filesystem::path& path);
// .yaml/.yml files are read as YAML, anything else as JSON.
ParameterDocument load_parameters(const std::filesystem::path& path);

bool succeeded(const std::vector<StepOutcome>& outcomes, std::size_t expected_steps);

class WorkloadRunner {
 public:
  explicit WorkloadRunner(std::filesystem::path workdir_root);

  void register_operation(const std::string& name, Operation op);
  bool has_operation(const std::string& name) const;
  void register_description(WorkloadDescription desc);
  void register_parameters(ParameterDocument params);
  void set_machine_parameters(const std::string& machine, ParameterDocument params);

  std::filesystem::path workdir(const std::string& machine, const std::string& job_id) const;

  // Runs the steps in order in workdir(machine, job_id); the first failing
  // step ends the run.
  std::vector<StepOutcome> execute_workload(const std::string& desc_id,
                                            const std::string& run_params_id,
                                            const std::string& machine_name,
                                            const std::string& job_id) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
  std::map<std::string, Operation> operations_;
  std::map<std::string, WorkloadDescription> descriptions_;
  std::map<std::string, ParameterDocument> run_params_;
  std::map<std::string, ParameterDocument> machine_params_;
};

}  // namespace urgent::workload
