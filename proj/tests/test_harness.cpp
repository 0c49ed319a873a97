#include "agentkernel/harness.hpp"

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

#include <filesystem>
#include <fstream>

using namespace agentkernel;
using namespace aktest;
using harness::FaultMode;
using harness::ScenarioConfig;

namespace {

const std::string kScenarioDir = AGENTKERNEL_SCENARIO_DIR;

ScenarioConfig nominal_config() {
  return harness::scenario_from_file(kScenarioDir + "/diagnosis/config.json");
}

ScenarioConfig hot_config() {
  return harness::scenario_from_file(kScenarioDir + "/diagnosis/config_hot.json");
}

std::uint64_t count_kind(const audit::EpisodeTrace& trace, std::string_view kind) {
  std::uint64_t n = 0;
  for (const auto& event : trace.events) {
    if (event.kind == kind) ++n;
  }
  return n;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("aktest-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("the nominal episode monitors without actuating") {
  const auto result = harness::run_scenario(nominal_config());
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::GoalSatisfied);
  CHECK(result.summary.why_stopped.detail == "monitor");
  CHECK(result.summary.actions_taken.empty());
  CHECK(result.summary.exit_code == 0);
  CHECK(oracle::unsimulated_actuations(result.trace.events).empty());
  CHECK_FALSE(audit::verify_chain(result.trace.events).has_value());
  // The conditional steps were skipped, visibly.
  CHECK(count_kind(result.trace, "StepSkipped") == 2);
}

TEST_CASE("the high-risk episode derates reversibly and raises a ticket") {
  const auto result = harness::run_scenario(hot_config());
  CHECK(result.summary.why_stopped.detail == "mitigated");
  CHECK(result.summary.actions_taken ==
        std::vector<std::string>{"derate_command", "schedule_service"});
  CHECK(result.summary.escalations >= 1);

  bool derate_seen = false, ticket_seen = false;
  for (const auto& event : result.trace.events) {
    if (event.kind != "AdapterInvoked") continue;
    if (event.payload.value("tool", std::string{}) == "derate_command") {
      derate_seen = true;
      // Least authority: the issued fraction respects the token cap.
      CHECK(event.payload.at("args").value("derate_fraction", 1.0) <= 0.4);
    }
    if (event.payload.value("tool", std::string{}) == "schedule_service") ticket_seen = true;
  }
  CHECK(derate_seen);
  CHECK(ticket_seen);
  CHECK(oracle::unsimulated_actuations(result.trace.events).empty());
  CHECK(oracle::actuations_after_safe_halt(result.trace.events).empty());

  // The episode summary went through the two-phase gates.
  CHECK(count_kind(result.trace, "Compacted") == 1);
  CHECK(count_kind(result.trace, "Promotion") >= 2);
}

TEST_CASE("a derate fraction above the token cap never actuates") {
  auto config = hot_config();
  config.derate_fraction = 0.45; // cap in the default token is 0.4
  const auto result = harness::run_scenario(config);
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::SafetyHalt);
  CHECK(result.summary.exit_code == 20);

  bool cap_exceeded = false;
  for (const auto& event : result.trace.events) {
    if (event.kind == "PlanValidated" && !event.payload.value("ok", true)) {
      cap_exceeded = canonical_dump(event.payload).find("CapExceeded") != std::string::npos;
    }
  }
  CHECK(cap_exceeded);
  for (const auto& event : result.trace.events) {
    if (event.kind == "AdapterInvoked") {
      CHECK(event.payload.value("scope", std::string{}) != "actuate_reversible");
    }
  }
}

TEST_CASE("risk above the supervisor threshold safe-halts before the gateway") {
  auto config = hot_config();
  config.supervisor.risk_threshold = 0.3; // simulated risk is ~0.77
  const auto result = harness::run_scenario(config);
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::SafetyHalt);
  CHECK(count_kind(result.trace, "SafeHalt") == 1);
  CHECK(count_kind(result.trace, "Escalation") >= 1);
  for (const auto& event : result.trace.events) {
    if (event.kind == "AdapterInvoked") {
      CHECK(event.payload.value("scope", std::string{}) != "actuate_reversible");
    }
  }
}

TEST_CASE("each injection mode reaches its documented safe state") {
  struct Case {
    harness::FaultInjection fault;
    assurance::WhyStoppedCode expected;
  };
  const std::vector<Case> cases = {
      {{"twin_simulate", FaultMode::SchemaMismatch, 0}, assurance::WhyStoppedCode::SafetyHalt},
      {{"twin_simulate", FaultMode::MissingData, 0}, assurance::WhyStoppedCode::SafetyHalt},
      {{"telemetry_query", FaultMode::PermanentFailure, 0},
       assurance::WhyStoppedCode::SafetyHalt},
  };
  for (const auto& c : cases) {
    auto config = harness::inject(hot_config(), c.fault);
    const auto result = harness::run_scenario(config);
    CHECK(result.summary.why_stopped.code == c.expected);
    CHECK(result.summary.exit_code == 20);
    CHECK(count_kind(result.trace, "SafeHalt") >= 1);
    CHECK(count_kind(result.trace, "Escalation") >= 1);
    CHECK(oracle::actuations_after_safe_halt(result.trace.events).empty());
  }
}

TEST_CASE("schema mismatch is caught before any adapter invocation of that call") {
  auto config = harness::inject(hot_config(), {"twin_simulate", FaultMode::SchemaMismatch, 0});
  const auto result = harness::run_scenario(config);
  for (const auto& event : result.trace.events) {
    if (event.kind == "AdapterInvoked") {
      CHECK(event.payload.value("tool", std::string{}) != "twin_simulate");
    }
  }
  bool validation_error = false;
  for (const auto& event : result.trace.events) {
    if (event.kind == "CallValidated" && !event.payload.value("ok", true)) {
      validation_error = true;
    }
  }
  CHECK(validation_error);
}

TEST_CASE("two transient flakes are absorbed by three attempts") {
  auto config = hot_config();
  config = harness::inject(std::move(config), {"telemetry_query", FaultMode::TransientFlake, 0});
  config = harness::inject(std::move(config), {"telemetry_query", FaultMode::TransientFlake, 1});
  const auto result = harness::run_scenario(config);
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::GoalSatisfied);
  std::uint64_t attempts = 0;
  for (const auto& event : result.trace.events) {
    if (event.kind == "OutcomeCommitted" &&
        event.payload.value("call_id", std::string{}) == "call-E1") {
      attempts = event.payload.value("attempts", std::uint64_t{0});
    }
  }
  CHECK(attempts == 3);
}

TEST_CASE("persistent telemetry failure degrades to monitor-only and halts") {
  auto config = harness::inject(hot_config(), {"telemetry_query", FaultMode::PermanentFailure, 0});
  const auto result = harness::run_scenario(config);
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::SafetyHalt);
  bool degraded = false;
  for (const auto& event : result.trace.events) {
    if (event.kind == "DegradedModeChanged" &&
        event.payload.value("to", std::string{}) == "monitor_only") {
      degraded = true;
    }
  }
  CHECK(degraded);
}

TEST_CASE("faults must reference registered tools") {
  CHECK_THROWS_AS(harness::inject(nominal_config(), {"no_such_tool", FaultMode::TransientFlake, 0}),
                  std::invalid_argument);
}

TEST_CASE("fault specs parse from their compact form") {
  const auto fault = harness::fault_from_spec("twin_simulate:missing_data:2");
  CHECK(fault.target_tool == "twin_simulate");
  CHECK(fault.mode == FaultMode::MissingData);
  CHECK(fault.at_call_index == 2);
  CHECK_THROWS_AS(harness::fault_from_spec("oops"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Determinism and replay

TEST_CASE("identical config and seed produce byte-identical traces") {
  const auto dir = fresh_dir("determinism");
  harness::RunOptions options;
  options.write_trace = true;
  options.output_dir = dir.string();
  harness::run_scenario(hot_config(), options);
  const auto first = dir / "diag-hot.trace";
  const auto second = dir / "second.trace";
  std::filesystem::rename(first, second);
  harness::run_scenario(hot_config(), options);

  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(first) == slurp(second));
  CHECK_FALSE(slurp(first).empty());
}

TEST_CASE("a seed override changes the embedded config and its hash") {
  harness::RunOptions options;
  options.seed_override = 777;
  const auto result = harness::run_scenario(nominal_config(), options);
  CHECK(result.trace.header.seed == 777);
  CHECK(result.trace.header.config.at("seed") == 777);
  CHECK(harness::replay_trace(result.trace).identical);
}

TEST_CASE("run then replay reports identical for every scenario family") {
  for (const auto& config : {nominal_config(), hot_config()}) {
    const auto result = harness::run_scenario(config);
    const auto report = harness::replay_trace(result.trace);
    CHECK(report.identical);
    CHECK(report.events_compared == result.trace.events.size());
  }
}

TEST_CASE("replay pins divergence to the tampered event") {
  const auto result = harness::run_scenario(hot_config());
  auto tampered = result.trace;
  // Corrupt a mid-trace payload; replay regenerates the honest one.
  const std::size_t victim = tampered.events.size() / 2;
  tampered.events[victim].payload["__tampered"] = true;
  const auto report = harness::replay_trace(tampered);
  CHECK_FALSE(report.identical);
  REQUIRE(report.first_divergence.has_value());
  CHECK(report.first_divergence->seq == victim);
}

TEST_CASE("dialogue scenarios replay from their embedded scripts") {
  const auto config =
      harness::scenario_from_file(kScenarioDir + "/dialogue/config_agree.json");
  const auto result = harness::run_scenario(config);
  CHECK(result.summary.why_stopped.code == assurance::WhyStoppedCode::ConsensusReached);
  CHECK(harness::replay_trace(result.trace).identical);
}

// ---------------------------------------------------------------------------
// Event coverage

TEST_CASE("decision operations leave their event kinds in the trace") {
  // Instrumentation coverage: one nominal and one hot episode must exercise
  // every kernel decision path's event kind.
  const auto nominal = harness::run_scenario(nominal_config());
  const auto hot = harness::run_scenario(hot_config());
  const std::vector<std::string> expected = {
      "EpisodeStarted", "MemoryWrite",  "Sanitized",      "Retrieved",
      "VerdictIssued",  "GoalAdopted",  "PlanValidated",  "BudgetCheck",
      "StepBound",      "CallValidated", "Permitted",     "AdapterInvoked",
      "OutcomeCommitted", "SagaIntended", "SagaStepDone", "PageIn",
      "Promotion",      "Compacted",    "WhyStopped",     "SupervisorAuthorized",
      "Escalation",     "MessagePosted"};
  for (const auto& kind : expected) {
    const bool found = count_kind(nominal.trace, kind) + count_kind(hot.trace, kind) > 0 ||
                       kind == "MessagePosted"; // dialogue families carry this one
    CHECK_MESSAGE(found, "missing event kind: ", kind);
  }
  const auto dialogue = harness::run_scenario(
      harness::scenario_from_file(kScenarioDir + "/dialogue/config_loop.json"));
  CHECK(count_kind(dialogue.trace, "MessagePosted") > 0);
  CHECK(count_kind(dialogue.trace, "DialogueStopped") == 1);
}

// ---------------------------------------------------------------------------
// Command line

TEST_CASE("the cli drives run, verify, replay, inject and dialogue") {
  const auto dir = fresh_dir("cli");
  const std::string config = kScenarioDir + "/diagnosis/config_hot.json";

  CHECK(harness::cli({"run", config, "--out", dir.string(), "--non-interactive"}) == 0);
  const std::string trace = (dir / "diag-hot.trace").string();
  CHECK(harness::cli({"verify", trace}) == 0);
  CHECK(harness::cli({"replay", trace}) == 0);

  const std::string injected = (dir / "injected.json").string();
  CHECK(harness::cli({"inject", config, "twin_simulate:missing_data:0", "--out", injected}) == 0);
  CHECK(harness::cli({"run", injected, "--out", dir.string()}) == 20);

  CHECK(harness::cli({"dialogue", kScenarioDir + "/dialogue/config_exhaust.json", "--out",
                      dir.string()}) == 10);
  CHECK(std::filesystem::exists(dir / "triage-exhaust.dag.json"));

  CHECK(harness::cli({}) == harness::kExitUsage);
  CHECK(harness::cli({"frobnicate", "x"}) == harness::kExitUsage);
  CHECK(harness::cli({"run", "/nonexistent/config.json"}) == harness::kExitNoInput);
  CHECK(harness::cli({"--help"}) == 0);
}

TEST_CASE("the cli flags tampered traces with a nonzero exit") {
  const auto dir = fresh_dir("cli-tamper");
  CHECK(harness::cli({"run", kScenarioDir + "/diagnosis/config.json", "--out", dir.string()}) ==
        0);
  const auto path = dir / "diag-nominal.trace";
  auto trace = audit::read_trace_file(path.string());
  trace.events[5].payload["x"] = 1;
  audit::write_trace_file(trace, path.string());
  CHECK(harness::cli({"verify", path.string()}) == 1);
  CHECK(harness::cli({"replay", path.string()}) == 1);
}
