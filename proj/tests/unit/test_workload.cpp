#include <doctest.h>

#include "support/fixtures.hpp"
#include "urgent/error.hpp"
#include "urgent/util.hpp"
#include "urgent/workload/runner.hpp"

using namespace urgent;
using namespace urgent::workload;
namespace fs = std::filesystem;

namespace {

ParameterDocument run_doc(Document values, const std::string& id = "run-1") {
  return {id, Scope::Run, std::move(values)};
}
ParameterDocument machine_doc(Document values) {
  return {"m", Scope::Machine, std::move(values)};
}

}  // namespace

TEST_CASE("resolve substitutes placeholders and keeps types for whole references") {
  const Document tmpl = {{"members", "${n_members}"},
                         {"label", "${region}-n${n_members}"},
                         {"nested", {{"list", {"${region}", 3}}}},
                         {"plain", 7}};
  const auto out = resolve(tmpl, run_doc({{"n_members", 10}, {"region", "rome"}}), machine_doc(Document::object()));
  CHECK(out["members"] == 10);
  CHECK(out["members"].is_number_integer());
  CHECK(out["label"] == "rome-n10");
  CHECK(out["nested"]["list"][0] == "rome");
  CHECK(out["plain"] == 7);
}

TEST_CASE("run scope wins over machine scope") {
  const auto out = resolve({{"s", "${scratch}"}, {"c", "${cores}"}},
                           run_doc({{"scratch", "/run"}}),
                           machine_doc({{"scratch", "/machine"}, {"cores", 36}}));
  CHECK(out["s"] == "/run");
  CHECK(out["c"] == 36);
}

TEST_CASE("missing placeholders are named in the error") {
  try {
    resolve({{"a", "${seed}"}, {"b", "${region}"}}, run_doc({{"region", "x"}}), machine_doc(Document::object()));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Validation);
    CHECK(std::string(e.what()).find("seed") != std::string::npos);
    CHECK(std::string(e.what()).find("region") == std::string::npos);
  }
}

TEST_CASE("non-scalar parameter values are rejected") {
  CHECK_THROWS_AS(resolve({}, run_doc({{"x", {1, 2}}}), machine_doc(Document::object())), Error);
}

namespace {

struct Fixture {
  testing::TempDir dir{"wl"};
  WorkloadRunner runner{dir.path()};
  std::vector<std::string> calls;
  Fixture() {
    for (const char* op : {"mosquito.preprocess", "mosquito.simulate", "raster.export"})
      runner.register_operation(op, [this, op](const Document& p, const fs::path& wd) {
        calls.push_back(op);
        write_file(wd / (std::string(op) + ".out"), p.dump());
        if (p.value("fail", false)) throw std::runtime_error(std::string(op) + " broke");
        return std::vector<std::string>{std::string("d-") + op};
      });
  }
  void mosquito(bool fail_second) {
    WorkloadDescription d{"mosquito", {{"pre", "mosquito.preprocess", {{"region", "${region}"}}},
                                       {"sim", "mosquito.simulate",
                                        {{"n", "${n_members}"}, {"fail", fail_second}}},
                                       {"export", "raster.export", {{"dir", "${scratch}/out"}}}}};
    runner.register_description(d);
  }
};

}  // namespace

TEST_CASE("three-step workload runs in order") {
  Fixture f;
  f.mosquito(false);
  f.runner.register_parameters(run_doc({{"region", "rome"}, {"n_members", 10}}));
  f.runner.set_machine_parameters("cirrus", machine_doc({{"scratch", "/scratch"}}));
  const auto out = f.runner.execute_workload("mosquito", "run-1", "cirrus", "j-1");
  REQUIRE(out.size() == 3);
  CHECK(succeeded(out, 3));
  CHECK(f.calls == std::vector<std::string>{"mosquito.preprocess", "mosquito.simulate", "raster.export"});
  CHECK(out[2].produced == std::vector<std::string>{"d-raster.export"});
  const auto exported = Document::parse(read_file(f.runner.workdir("cirrus", "j-1") / "raster.export.out"));
  CHECK(exported["dir"] == "/scratch/out");
}

TEST_CASE("a failing step aborts the rest") {
  Fixture f;
  f.mosquito(true);
  f.runner.register_parameters(run_doc({{"region", "rome"}, {"n_members", 10}, {"scratch", "/s"}}));
  const auto out = f.runner.execute_workload("mosquito", "run-1", "cirrus", "j-2");
  REQUIRE(out.size() == 2);
  CHECK(out[0].ok);
  CHECK_FALSE(out[1].ok);
  CHECK(out[1].error == "mosquito.simulate broke");
  CHECK_FALSE(succeeded(out, 3));
  CHECK(f.calls.size() == 2);
}

TEST_CASE("empty workload completes with no outcomes") {
  Fixture f;
  f.runner.register_description({"empty", {}});
  f.runner.register_parameters(run_doc(Document::object()));
  const auto out = f.runner.execute_workload("empty", "run-1", "cirrus", "j-3");
  CHECK(out.empty());
  CHECK(succeeded(out, 0));
}

TEST_CASE("operation registry rules") {
  Fixture f;
  CHECK_THROWS_AS(f.runner.register_operation("raster.export", [](const Document&, const fs::path&) {
    return std::vector<std::string>{};
  }), Error);
  f.runner.register_description({"odd", {{"x", "nobody.home", {}}}});
  f.runner.register_parameters(run_doc(Document::object()));
  const auto out = f.runner.execute_workload("odd", "run-1", "cirrus", "j-4");
  REQUIRE(out.size() == 1);
  CHECK_FALSE(out[0].ok);
  CHECK(out[0].error.find("nobody.home") != std::string::npos);
  CHECK_THROWS_AS(f.runner.register_description({"dup", {{"a", "x", {}}, {"a", "y", {}}}}), Error);
}

TEST_CASE("unresolved placeholder fails its step, not the runner") {
  Fixture f;
  f.mosquito(false);
  f.runner.register_parameters(run_doc({{"region", "rome"}}));
  const auto out = f.runner.execute_workload("mosquito", "run-1", "cirrus", "j-5");
  REQUIRE(out.size() == 2);
  CHECK_FALSE(out[1].ok);
  CHECK(out[1].error.find("n_members") != std::string::npos);
}

TEST_CASE("identical params on two machines give bit-equal outputs") {
  Fixture f;
  f.mosquito(false);
  f.runner.register_parameters(run_doc({{"region", "rome"}, {"n_members", 10}}));
  f.runner.set_machine_parameters("a", machine_doc({{"scratch", "/s"}}));
  f.runner.set_machine_parameters("b", machine_doc({{"scratch", "/s"}}));
  f.runner.execute_workload("mosquito", "run-1", "a", "j-1");
  f.runner.execute_workload("mosquito", "run-1", "b", "j-1");
  for (const char* file : {"mosquito.preprocess.out", "mosquito.simulate.out", "raster.export.out"})
    CHECK(sha256_file(f.runner.workdir("a", "j-1") / file) ==
          sha256_file(f.runner.workdir("b", "j-1") / file));
}

TEST_CASE("parameter and description files load") {
  testing::TempDir dir("wl");
  write_file(dir / "cirrus.yaml",
             "id: cirrus\nscope: MACHINE\nvalues:\n  scratch: /work/x\n  cores: 36\n  fast: true\n"
             "  ratio: 0.5\n  tag: \"007\"\n");
  const auto p = load_parameters(dir / "cirrus.yaml");
  CHECK(p.scope == Scope::Machine);
  CHECK(p.values["scratch"] == "/work/x");
  CHECK(p.values["cores"] == 36);
  CHECK(p.values["fast"] == true);
  CHECK(p.values["ratio"] == 0.5);
  CHECK(p.values["tag"] == "007");

  const ParameterDocument run = run_doc({{"seed", 4}});
  write_file(dir / "run.json", parameters_to_json(run).dump());
  CHECK(load_parameters(dir / "run.json").values == run.values);

  const WorkloadDescription d{"w", {{"a", "op.a", {{"k", "${seed}"}}}, {"b", "op.b", {}}}};
  write_file(dir / "w.json", description_to_json(d).dump());
  const auto back = load_description(dir / "w.json");
  REQUIRE(back.steps.size() == 2);
  CHECK(back.steps[0].param_template["k"] == "${seed}");
  CHECK(back.steps[1].operation == "op.b");
}
