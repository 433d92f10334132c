#include "urgent/workload/runner.hpp"

#include "urgent/error.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace urgent::workload {

namespace {

std::string scalar_text(const Document& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

Document substitute(const Document& node, const Document& params, std::set<std::string>& missing) {
  if (node.is_object()) {
    Document out = Document::object();
    for (auto it = node.begin(); it != node.end(); ++it)
      out[it.key()] = substitute(it.value(), params, missing);
    return out;
  }
  if (node.is_array()) {
    Document out = Document::array();
    for (const auto& item : node) out.push_back(substitute(item, params, missing));
    return out;
  }
  if (!node.is_string()) return node;

  const std::string& text = node.get_ref<const std::string&>();
  std::string out;
  std::size_t pos = 0;
  std::size_t refs = 0;
  Document whole;
  while (pos < text.size()) {
    const auto open = text.find("${", pos);
    if (open == std::string::npos) break;
    const auto close = text.find('}', open + 2);
    if (close == std::string::npos) break;
    out.append(text, pos, open - pos);
    const std::string key = text.substr(open + 2, close - open - 2);
    ++refs;
    if (auto it = params.find(key); it != params.end()) {
      out += scalar_text(*it);
      whole = *it;
    } else {
      missing.insert(key);
    }
    pos = close + 1;
  }
  out.append(text, pos, std::string::npos);
  const bool single = refs == 1 && text.rfind("${", 0) == 0 && text.back() == '}' &&
                      text.find("${", 2) == std::string::npos;
  if (single && !whole.is_null()) return whole;
  return out;
}

Document check_flat(const Document& values) {
  if (!values.is_object()) fail(ErrorCode::Validation, "parameter values must be an object");
  for (auto it = values.begin(); it != values.end(); ++it)
    if (it.value().is_structured())
      fail(ErrorCode::Validation, "parameter '" + it.key() + "' is not a scalar");
  return values;
}

Document yaml_to_scalar(const YAML::Node& n) {
  const std::string s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(s, &used);
    if (used == s.size()) return i;
  } catch (...) {
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (...) {
  }
  return s;
}

}  // namespace

Document resolve(const Document& tmpl, const ParameterDocument& run,
                 const ParameterDocument& machine) {
  Document merged = check_flat(machine.values);
  const Document run_values = check_flat(run.values);
  for (auto it = run_values.begin(); it != run_values.end(); ++it) merged[it.key()] = it.value();
  std::set<std::string> missing;
  Document out = substitute(tmpl, merged, missing);
  if (!missing.empty()) {
    std::string names;
    for (const auto& k : missing) names += (names.empty() ? "" : ", ") + k;
    fail(ErrorCode::Validation, "unresolved parameters: " + names);
  }
  return out;
}

WorkloadDescription description_from_json(const Document& j) {
  WorkloadDescription d;
  j.at("id").get_to(d.id);
  std::set<std::string> names;
  for (const auto& s : j.at("steps")) {
    Step step;
    s.at("name").get_to(step.name);
    s.at("operation").get_to(step.operation);
    step.param_template = s.value("params", Document::object());
    if (!names.insert(step.name).second)
      fail(ErrorCode::Validation, "duplicate step name " + step.name);
    d.steps.push_back(std::move(step));
  }
  return d;
}

Document description_to_json(const WorkloadDescription& d) {
  Document steps = Document::array();
  for (const auto& s : d.steps)
    steps.push_back({{"name", s.name}, {"operation", s.operation}, {"params", s.param_template}});
  return {{"id", d.id}, {"steps", steps}};
}

ParameterDocument parameters_from_json(const Document& j) {
  ParameterDocument p;
  p.id = j.value("id", "");
  const std::string scope = j.value("scope", "RUN");
  if (scope == "RUN") p.scope = Scope::Run;
  else if (scope == "MACHINE") p.scope = Scope::Machine;
  else fail(ErrorCode::Validation, "unknown parameter scope " + scope);
  p.values = check_flat(j.value("values", Document::object()));
  return p;
}

Document parameters_to_json(const ParameterDocument& p) {
  return {{"id", p.id}, {"scope", p.scope == Scope::Run ? "RUN" : "MACHINE"}, {"values", p.values}};
}

WorkloadDescription load_description(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
  return description_from_json(Document::parse(in));
}

ParameterDocument load_parameters(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".yaml" || ext == ".yml") {
    YAML::Node root;
    try {
      root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
      fail(ErrorCode::Validation, std::string("bad YAML in ") + path.string() + ": " + e.what());
    }
    Document j = Document::object();
    if (root["id"]) j["id"] = root["id"].as<std::string>();
    if (root["scope"]) j["scope"] = root["scope"].as<std::string>();
    Document values = Document::object();
    for (const auto& kv : root["values"]) {
      if (!kv.second.IsScalar())
        fail(ErrorCode::Validation, "parameter '" + kv.first.as<std::string>() + "' is not a scalar");
      values[kv.first.as<std::string>()] = yaml_to_scalar(kv.second);
    }
    j["values"] = values;
    return parameters_from_json(j);
  }
  std::ifstream in(path);
  if (!in) fail(ErrorCode::NotFound, "cannot open " + path.string());
  return parameters_from_json(Document::parse(in));
}

bool succeeded(const std::vector<StepOutcome>& outcomes, std::size_t expected_steps) {
  if (outcomes.size() != expected_steps) return false;
  for (const auto& o : outcomes)
    if (!o.ok) return false;
  return true;
}

WorkloadRunner::WorkloadRunner(fs::path workdir_root) : root_(std::move(workdir_root)) {}

void WorkloadRunner::register_operation(const std::string& name, Operation op) {
  require(!name.empty() && static_cast<bool>(op), "operation needs a name and a callable");
  std::lock_guard lock(mutex_);
  if (!operations_.emplace(name, std::move(op)).second)
    fail(ErrorCode::Conflict, "operation " + name + " already registered");
}

bool WorkloadRunner::has_operation(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return operations_.count(name) > 0;
}

void WorkloadRunner::register_description(WorkloadDescription desc) {
  std::set<std::string> names;
  for (const auto& s : desc.steps)
    if (!names.insert(s.name).second) fail(ErrorCode::Validation, "duplicate step name " + s.name);
  std::lock_guard lock(mutex_);
  descriptions_[desc.id] = std::move(desc);
}

void WorkloadRunner::register_parameters(ParameterDocument params) {
  check_flat(params.values);
  std::lock_guard lock(mutex_);
  run_params_[params.id] = std::move(params);
}

void WorkloadRunner::set_machine_parameters(const std::string& machine, ParameterDocument params) {
  check_flat(params.values);
  params.scope = Scope::Machine;
  std::lock_guard lock(mutex_);
  machine_params_[machine] = std::move(params);
}

fs::path WorkloadRunner::workdir(const std::string& machine, const std::string& job_id) const {
  return root_ / machine / job_id;
}

std::vector<StepOutcome> WorkloadRunner::execute_workload(const std::string& desc_id,
                                                          const std::string& run_params_id,
                                                          const std::string& machine_name,
                                                          const std::string& job_id) const {
  WorkloadDescription desc;
  ParameterDocument run;
  ParameterDocument machine{machine_name, Scope::Machine, Document::object()};
  {
    std::lock_guard lock(mutex_);
    auto d = descriptions_.find(desc_id);
    if (d == descriptions_.end()) fail(ErrorCode::NotFound, "unknown workload " + desc_id);
    desc = d->second;
    auto r = run_params_.find(run_params_id);
    if (r == run_params_.end()) fail(ErrorCode::NotFound, "unknown parameters " + run_params_id);
    run = r->second;
    if (auto m = machine_params_.find(machine_name); m != machine_params_.end()) machine = m->second;
  }

  const fs::path dir = workdir(machine_name, job_id);
  fs::create_directories(dir);
  std::vector<StepOutcome> outcomes;
  for (const auto& step : desc.steps) {
    StepOutcome out{step.name, step.operation, false, {}, {}};
    try {
      const Document params = resolve(step.param_template, run, machine);
      Operation op;
      {
        std::lock_guard lock(mutex_);
        auto it = operations_.find(step.operation);
        if (it == operations_.end())
          fail(ErrorCode::NotFound, "unknown operation " + step.operation);
        op = it->second;
      }
      out.produced = op(params, dir);
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    outcomes.push_back(std::move(out));
    if (!outcomes.back().ok) break;
  }
  return outcomes;
}

}  // namespace urgent::workload
