#include <doctest.h>

#include "support/fixtures.hpp"
#include "urgent/error.hpp"
#include "urgent/federation/federation.hpp"
#include "urgent/federation/matrix.hpp"
#include "urgent/util.hpp"

#include <random>

using namespace urgent;
using namespace urgent::fed;
using namespace std::chrono_literals;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Precondition;
}

MachineSpec cluster(const std::string& name, int nodes = 16, int short_nodes = 1) {
  MachineSpec m;
  m.name = name;
  m.total_nodes = nodes;
  m.queues = {QueueSpec{"short", short_nodes, 1200, 10, true, std::nullopt},
              QueueSpec{"normal", nodes, 86400, 0, false, std::nullopt}};
  return m;
}

Job job_on(const std::string& machine, const std::string& queue, int nodes, double runtime) {
  Job j;
  j.incident_id = "inc";
  j.machine = machine;
  j.queue = queue;
  j.nodes = nodes;
  j.runtime_s = runtime;
  return j;
}

}  // namespace

TEST_CASE("machine registration rules") {
  Federation fed;
  CHECK(fed.register_machine(cluster("cirrus")) == "cirrus");
  CHECK(code_of([&] { fed.register_machine(cluster("cirrus")); }) == ErrorCode::Conflict);
  auto two_short = cluster("x");
  two_short.queues[1].is_short = true;
  CHECK(code_of([&] { fed.register_machine(two_short); }) == ErrorCode::Precondition);
  auto empty = cluster("y");
  empty.total_nodes = 0;
  CHECK(code_of([&] { fed.register_machine(empty); }) == ErrorCode::Precondition);
  CHECK(fed.wait_estimate("cirrus", "short") == 60.0);
  CHECK(fed.wait_estimate("cirrus", "normal") == 1800.0);
}

TEST_CASE("machine config file parses as a list or under \"machines\"") {
  testing::TempDir dir("fed");
  const nlohmann::json list = {cluster("a"), cluster("b")};
  write_file(dir / "m.json", list.dump());
  const auto machines = load_machines(dir / "m.json");
  REQUIRE(machines.size() == 2);
  CHECK(machines[1].name == "b");
  CHECK(machines[0].queues[0].is_short);
  CHECK(parse_machines({{"machines", list}}).size() == 2);
  CHECK(code_of([] { parse_machines(nlohmann::json{{"machines", 3}}); }) == ErrorCode::Validation);
}

TEST_CASE("select_target prefers the short queue for short runs") {
  Federation fed;
  auto m = cluster("cirrus");
  m.queues[0].default_wait_s = 10;
  m.queues[1].default_wait_s = 600;
  fed.register_machine(m);
  const auto t = fed.select_target(1, 86.0);
  CHECK(t.machine == "cirrus");
  CHECK(t.queue == "short");
  CHECK(t.cost_s == doctest::Approx(96.0));
}

TEST_CASE("select_target falls back to the normal queue beyond the short cap") {
  Federation fed;
  fed.register_machine(cluster("cirrus"));
  CHECK(fed.select_target(1, 1803.0).queue == "normal");
  CHECK(fed.select_target(2, 10.0).queue == "normal");  // short queue is one node
  CHECK(code_of([&] { fed.select_target(17, 10.0); }) == ErrorCode::NoCapacity);
  CHECK(code_of([&] { fed.select_target(1, 90000.0); }) == ErrorCode::NoCapacity);
}

TEST_CASE("select_target weighs transfer of non-resident inputs") {
  testing::TempDir dir("fed");
  data::DataCatalog cat(dir.path());
  write_file(cat.machine_dir("b") / "t.asc", "x");
  const auto id = cat.register_file("t.asc", "b", 500'000'000, "inc", data::Kind::Input, "");
  Federation fed({}, nullptr, &cat);
  fed.register_machine(cluster("a"));
  fed.register_machine(cluster("b"));
  // Without inputs the tie goes to "a".
  CHECK(fed.select_target(1, 100.0).machine == "a");
  const auto t = fed.select_target(1, 100.0, {id});
  CHECK(t.machine == "b");
  CHECK(t.transfer_s == 0.0);
  // Hand computation: a pays 5e8 B / 1e8 B/s = 5 s extra.
  const auto copy = cat.copy(id, "a", 1e8);
  CHECK(copy.transfer_s == doctest::Approx(5.0));
  CHECK(fed.select_target(1, 100.0, {id}).machine == "a");
}

TEST_CASE("submit to an idle machine starts at the same instant") {
  workflow::Broker broker;
  std::vector<nlohmann::json> running;
  broker.register_stage("started", "s", [&](const workflow::Message& m) { running.push_back(m.payload); });
  Federation fed({}, &broker);
  fed.register_machine(cluster("cirrus"));
  fed.advance(42.0);
  auto j = job_on("cirrus", "normal", 4, 100.0);
  j.callbacks[JobState::Running] = "started";
  const auto id = fed.submit(j);
  CHECK(fed.job(id).state == JobState::Queued);
  fed.advance(42.0);
  broker.drain(5s);
  REQUIRE(running.size() == 1);
  CHECK(running[0]["t"] == 42.0);
  CHECK(running[0]["job_id"] == id);
  CHECK(fed.job(id).start_t == 42.0);
}

TEST_CASE("two full-machine jobs run back to back") {
  Federation fed;
  fed.register_machine(cluster("m", 8));
  const auto a = fed.submit(job_on("m", "normal", 8, 100.0));
  const auto b = fed.submit(job_on("m", "normal", 8, 50.0));
  fed.advance(1000.0);
  CHECK(fed.job(a).end_t == 100.0);
  CHECK(fed.job(b).start_t == 100.0);
  CHECK(fed.job(b).end_t == 150.0);
  const auto recs = fed.records();
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].queue_wait_s == 100.0);
  CHECK(recs[1].coefficient == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
}

TEST_CASE("submit rejects oversized requests and unknown machines") {
  Federation fed;
  fed.register_machine(cluster("m", 8));
  CHECK(code_of([&] { fed.submit(job_on("m", "short", 2, 1.0)); }) == ErrorCode::Rejected);
  auto long_one = job_on("m", "short", 1, 1.0);
  long_one.requested_walltime_s = 5000;
  CHECK(code_of([&] { fed.submit(long_one); }) == ErrorCode::Rejected);
  CHECK(code_of([&] { fed.submit(job_on("nowhere", "short", 1, 1.0)); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { fed.submit(job_on("m", "gpu", 1, 1.0)); }) == ErrorCode::NotFound);
}

TEST_CASE("advance counts start and end events") {
  Federation fed;
  CHECK(fed.advance(10.0) == 0);
  fed.register_machine(cluster("m"));
  fed.submit(job_on("m", "normal", 1, 100.0));
  CHECK(fed.advance(110.0) == 2);
  CHECK(code_of([&] { fed.advance(5.0); }) == ErrorCode::Precondition);
  CHECK(fed.now() == 110.0);
}

TEST_CASE("release time holds a job pending") {
  Federation fed;
  fed.register_machine(cluster("m"));
  auto j = job_on("m", "normal", 1, 10.0);
  j.release_t = 30.0;
  const auto id = fed.submit(j);
  CHECK(fed.job(id).state == JobState::Pending);
  fed.advance(29.0);
  CHECK(fed.job(id).state == JobState::Pending);
  fed.advance(100.0);
  CHECK(fed.job(id).queued_t == 30.0);
  CHECK(fed.job(id).end_t == 40.0);
}

TEST_CASE("runtime beyond the walltime fails the job at the cap") {
  Federation fed;
  fed.register_machine(cluster("m"));
  auto j = job_on("m", "short", 1, 2000.0);
  const auto id = fed.submit(j);
  fed.advance(5000.0);
  CHECK(fed.job(id).state == JobState::Failed);
  CHECK(fed.job(id).end_t == 1200.0);
  CHECK(fed.job(id).error == "walltime exceeded");
}

TEST_CASE("executor outcome decides completion") {
  Federation fed;
  fed.register_machine(cluster("m"));
  fed.set_executor([](const Job& j) {
    if (j.tags.value("fail", false)) return JobOutcome{false, {}, "step 2 failed"};
    return JobOutcome{true, {"d-1", "d-2"}, ""};
  });
  const auto ok = fed.submit(job_on("m", "normal", 1, 5.0));
  auto bad_job = job_on("m", "normal", 1, 5.0);
  bad_job.tags = {{"fail", true}};
  const auto bad = fed.submit(bad_job);
  fed.advance(100.0);
  CHECK(fed.job(ok).state == JobState::Completed);
  CHECK(fed.job(ok).outputs == std::vector<std::string>{"d-1", "d-2"});
  CHECK(fed.job(bad).state == JobState::Failed);
  CHECK(fed.job(bad).error == "step 2 failed");
  CHECK(fed.records().size() == 1);
}

TEST_CASE("cancel semantics") {
  workflow::Broker broker;
  int cancelled_callbacks = 0;
  broker.register_stage("cancelled", "s", [&](const workflow::Message&) { ++cancelled_callbacks; });
  Federation fed({}, &broker);
  fed.register_machine(cluster("m", 4));
  auto a = job_on("m", "normal", 4, 100.0);
  auto b = job_on("m", "normal", 4, 100.0);
  auto c = job_on("m", "normal", 4, 100.0);
  for (auto* j : {&a, &b, &c}) j->callbacks[JobState::Cancelled] = "cancelled";
  const auto ia = fed.submit(a), ib = fed.submit(b), ic = fed.submit(c);
  fed.advance(10.0);
  CHECK(fed.cancel(ic) == JobState::Queued);
  CHECK(fed.cancel(ia) == JobState::Running);
  fed.advance(10.0);
  CHECK(fed.job(ib).start_t == 10.0);  // freed nodes go to the next queued job
  fed.advance(200.0);
  CHECK(fed.cancel(ib) == JobState::Completed);
  CHECK(fed.job(ib).state == JobState::Completed);
  CHECK(code_of([&] { fed.cancel("j-404"); }) == ErrorCode::NotFound);
  broker.drain(5s);
  CHECK(cancelled_callbacks == 2);
}

TEST_CASE("short queue head starts before an earlier normal head") {
  Federation fed;
  fed.register_machine(cluster("m", 2, 1));
  const auto blocker = fed.submit(job_on("m", "normal", 2, 100.0));
  const auto normal = fed.submit(job_on("m", "normal", 2, 10.0));
  const auto shortj = fed.submit(job_on("m", "short", 1, 10.0));
  fed.advance(1000.0);
  CHECK(fed.job(blocker).end_t == 100.0);
  CHECK(fed.job(shortj).start_t == 100.0);
  CHECK(fed.job(normal).start_t == 110.0);
}

TEST_CASE("no backfill: a small job waits behind a blocked head") {
  Federation fed;
  fed.register_machine(cluster("m", 4, 1));
  fed.submit(job_on("m", "normal", 3, 100.0));
  const auto big = fed.submit(job_on("m", "normal", 4, 10.0));
  const auto small = fed.submit(job_on("m", "normal", 1, 10.0));
  fed.advance(1000.0);
  CHECK(fed.job(big).start_t == 100.0);
  CHECK(fed.job(small).start_t == 110.0);
}

TEST_CASE("EMA wait updates on job start") {
  Federation fed;
  fed.register_machine(cluster("m", 1, 1));
  fed.submit(job_on("m", "short", 1, 100.0));
  fed.submit(job_on("m", "short", 1, 100.0));
  fed.advance(1000.0);
  // 60 -> 0.7*60 (wait 0) -> 0.3*100 + 0.7*42
  CHECK(fed.wait_estimate("m", "short") == doctest::Approx(0.3 * 100 + 0.7 * (0.7 * 60)));
}

namespace {

struct Trace {
  std::vector<std::tuple<std::string, std::string, std::string, double>> events;
  bool over_capacity = false;
};

Trace random_run(std::uint32_t seed) {
  Federation fed;
  fed.register_machine(cluster("a", 8, 2));
  fed.register_machine(cluster("b", 4, 1));
  auto trace = std::make_shared<Trace>();
  std::map<std::string, int> used;
  fed.add_transition_listener([trace, &used](const Job& j, JobState from, JobState to, double t) {
    if (to == JobState::Running) used[j.machine] += j.nodes;
    if (from == JobState::Running) used[j.machine] -= j.nodes;
    if (used["a"] > 8 || used["b"] > 4) trace->over_capacity = true;
    trace->events.emplace_back(j.id, std::string(to_string(from)), std::string(to_string(to)), t);
  });
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> pick(0, 99);
  std::vector<std::string> ids;
  double t = 0.0;
  for (int i = 0; i < 60; ++i) {
    const bool on_a = pick(rng) % 2 == 0;
    const bool is_short = pick(rng) % 3 == 0;
    const int cap = is_short ? (on_a ? 2 : 1) : (on_a ? 8 : 4);
    auto j = job_on(on_a ? "a" : "b", is_short ? "short" : "normal", 1 + pick(rng) % cap,
                    1.0 + pick(rng) * 7.0);
    if (pick(rng) < 10) j.release_t = t + pick(rng);
    ids.push_back(fed.submit(j));
    if (pick(rng) < 8) fed.cancel(ids[static_cast<std::size_t>(pick(rng)) % ids.size()]);
    t += pick(rng) * 0.5;
    fed.advance(t);
  }
  fed.advance(1e6);
  for (const auto& r : fed.records())
    CHECK(r.coefficient == doctest::Approx(r.runtime_s / (r.runtime_s + r.queue_wait_s)).epsilon(1e-12));
  for (const auto& j : fed.jobs()) {
    CHECK(is_terminal(j.state));
    if (j.state == JobState::Completed) {
      CHECK(j.start_t >= j.submit_t);
      CHECK(j.end_t >= j.start_t);
    }
  }
  return *trace;
}

}  // namespace

TEST_CASE("random schedules conserve nodes and replay identically") {
  for (std::uint32_t seed = 1; seed <= 20; ++seed) {
    const auto first = random_run(seed);
    const auto second = random_run(seed);
    CHECK_FALSE(first.over_capacity);
    CHECK(first.events == second.events);
  }
}

TEST_CASE("every transition with a callback emits one message") {
  workflow::Broker broker;
  std::map<std::string, int> seen;
  for (const char* q : {"q.queued", "q.running", "q.completed"})
    broker.register_stage(q, q, [&seen, q](const workflow::Message&) { ++seen[q]; });
  Federation fed({}, &broker);
  fed.register_machine(cluster("m", 2));
  for (int i = 0; i < 10; ++i) {
    auto j = job_on("m", "normal", 1 + i % 2, 10.0 + i);
    j.callbacks = {{JobState::Queued, "q.queued"},
                   {JobState::Running, "q.running"},
                   {JobState::Completed, "q.completed"}};
    fed.submit(j);
  }
  fed.advance(1e5);
  broker.drain(5s);
  CHECK(seen["q.queued"] == 10);
  CHECK(seen["q.running"] == 10);
  CHECK(seen["q.completed"] == 10);
}

TEST_CASE("scheduling coefficient identity") {
  CHECK(scheduling_coefficient(3600, 3600) == 0.5);
  CHECK(scheduling_coefficient(3600, 0) == 1.0);
  CHECK(scheduling_coefficient(0, 0) == 1.0);
}

TEST_CASE("scheduling matrix buckets") {
  const std::vector<double> nodes{1, 4, 16}, hours{0.5, 1, 2};
  const auto m = scheduling_matrix({{"a", 1, 3600, 3600, 0.5}, {"b", 3, 1800, 0, 1.0},
                                    {"c", 64, 60, 0, 1.0}, {"d", 1, 3600, 0, 1.0}},
                                   nodes, hours);
  CHECK(m.cells[0][1].count == 2);
  CHECK(*m.cells[0][1].mean_coefficient == doctest::Approx(0.75));
  CHECK(m.cells[1][0].count == 1);
  CHECK(*m.cells[1][0].mean_coefficient == 1.0);
  CHECK(m.overflow == 1);
  CHECK_FALSE(m.cells[2][2].mean_coefficient);

  const auto single = scheduling_matrix({{"x", 1, 3600, 3600, scheduling_coefficient(3600, 3600)}},
                                        {1}, {1});
  CHECK(*single.cells[0][0].mean_coefficient == 0.5);

  const auto empty = scheduling_matrix({}, nodes, hours);
  for (const auto& row : empty.cells)
    for (const auto& c : row) {
      CHECK(c.count == 0);
      CHECK_FALSE(c.mean_coefficient);
    }
  const auto csv = m.to_csv();
  CHECK(csv.rfind("node_bucket,hour_bucket,count,mean_coefficient\n", 0) == 0);
  CHECK(csv.find("\n1,1,2,0.75\n") != std::string::npos);
  CHECK(csv.find("\n16,2,0,\n") != std::string::npos);
  CHECK(code_of([&] { scheduling_matrix({}, {4, 1}, hours); }) == ErrorCode::Precondition);
}

TEST_CASE("runtime estimates follow the cost model") {
  Federation fed;
  CHECK(fed.estimate_runtime("mosquito", 10) == doctest::Approx(86.04));
  CHECK(fed.estimate_runtime("mosquito", 3000) == doctest::Approx(1802.3));
  CHECK(fed.estimate_runtime("mosquito", 3000) > kShortQueueWalltimeS);
  fed.set_cost_model("unit", {0.0, 1.0});
  CHECK(fed.estimate_runtime("unit", 1) == 1.0);
  CHECK(code_of([&] { fed.estimate_runtime("unit", 0); }) == ErrorCode::Precondition);
  CHECK(code_of([&] { fed.estimate_runtime("nope", 1); }) == ErrorCode::NotFound);
}

TEST_CASE("default cost model is the line through the 10- and 3000-member totals") {
  // Least squares over all three totals gives a negative fixed cost, so the
  // default passes through the two endpoints instead.
  const double x0 = 10, y0 = 86, x1 = 3000, y1 = 1803;
  const double slope = (y1 - y0) / (x1 - x0);
  const double intercept = y0 - slope * x0;
  CHECK(kMosquitoCostModel.t_member == doctest::Approx(slope).epsilon(1e-3));
  CHECK(kMosquitoCostModel.t_fixed == doctest::Approx(intercept).epsilon(1e-3));
  const double sx = x0 + 1000 + x1, sy = y0 + 398 + y1;
  const double sxx = x0 * x0 + 1e6 + x1 * x1, sxy = x0 * y0 + 1000 * 398 + x1 * y1;
  const double ols_slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
  CHECK((sy - ols_slope * sx) / 3 < 0.0);
}
