#include "agentkernel/gateway.hpp"

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

#include <memory>

using namespace agentkernel;
using namespace aktest;
using contracts::ToolScope;
using gateway::OutcomeStatus;

namespace {

struct Bench {
  contracts::ToolRegistry registry;
  LogicalClock clock;
  audit::AuditLog log{&clock};
  assurance::VerdictStore verdicts;
  std::unique_ptr<gateway::Gateway> gw;
  contracts::CapabilityToken token = broad_token();
  std::shared_ptr<std::uint64_t> invocations = std::make_shared<std::uint64_t>(0);

  explicit Bench(gateway::GatewayConfig config = {}) {
    registry.add(simple_spec("probe", ToolScope::ReadOnly,
                             {field("n", contracts::FieldKind::Integer, false)}));
    auto keyed = simple_spec("record", ToolScope::ReadOnly,
                             {field("n", contracts::FieldKind::Integer, false)});
    keyed.requires_idempotency_key = true;
    registry.add(keyed);
    registry.add(simple_spec("act", ToolScope::ActuateReversible,
                             {field("step", contracts::FieldKind::Integer, false),
                              field("fail", contracts::FieldKind::Boolean, false)}));
    registry.add(simple_spec("undo", ToolScope::ActuateReversible,
                             {field("step", contracts::FieldKind::Integer, false)}));
    auto irreversible = simple_spec("wipe", ToolScope::ActuateIrreversible);
    registry.add(irreversible);

    gw = std::make_unique<gateway::Gateway>(registry, log, clock, std::move(config));
    gw->set_verdict_lookup([this](const std::string& id) { return verdicts.find(id); });

    const auto count_and_ok = [this](const json& args, Tick, std::uint64_t) {
      ++*invocations;
      if (args.value("fail", false)) {
        return gateway::AdapterResult{std::nullopt, "permanent", 1};
      }
      return gateway::AdapterResult{std::make_optional<json>(json{{"ok", true}, {"echo", args}}),
                                    std::nullopt, 1};
    };
    gw->register_adapter("probe", "1", count_and_ok);
    gw->register_adapter("record", "1", count_and_ok);
    gw->register_adapter("act", "1", count_and_ok);
    gw->register_adapter("undo", "1", count_and_ok);
    gw->register_adapter("wipe", "1", count_and_ok);
  }

  /// A passing simulation verdict for the given plan step.
  std::string sim_verdict(const std::string& step) {
    assurance::Verdict v;
    v.verdict_id = "sv-" + step;
    v.verifier_id = "twin-simulation";
    v.subject_ref = step;
    v.pass = true;
    if (verdicts.find(v.verdict_id) == nullptr) verdicts.put(v);
    return v.verdict_id;
  }

  gateway::GatewayOutcome run(contracts::ToolCall call, std::uint64_t seed = 1) {
    const auto* spec = registry.find(call.tool_name, call.tool_version);
    REQUIRE(spec != nullptr);
    return gw->execute(permitted(*spec, call, token, clock.now()), seed);
  }
};

} // namespace

TEST_CASE("duplicate submissions with one key invoke the adapter once") {
  Bench bench;
  auto call = call_to("record", {{"n", 1}}, "key-1");
  const auto first = bench.run(call);
  CHECK(first.status == OutcomeStatus::Ok);
  auto duplicate = call_to("record", {{"n", 1}}, "key-1");
  const auto second = bench.run(duplicate);
  CHECK(second.status == OutcomeStatus::Ok);
  CHECK(second.result == first.result);
  CHECK(*bench.invocations == 1); // adapter wrapped with an invocation counter
}

TEST_CASE("same key with a different fingerprint is a conflict, not an overwrite") {
  Bench bench;
  bench.run(call_to("record", {{"n", 1}}, "key-1"));
  const auto conflict = bench.run(call_to("record", {{"n", 2}}, "key-1"));
  CHECK(conflict.status == OutcomeStatus::Conflict);
  CHECK(conflict.attempts == 0);
  CHECK(*bench.invocations == 1);
  // The stored record still carries the first fingerprint.
  const auto& stored = bench.gw->idempotency_records().at("key-1");
  CHECK(stored.call_fingerprint ==
        contracts::call_fingerprint(call_to("record", {{"n", 1}}, "key-1")));
}

TEST_CASE("an actuating call without a simulation verdict is refused before the adapter") {
  Bench bench;
  const auto outcome = bench.run(call_to("act", {{"step", 1}}, "k-act"));
  CHECK(outcome.status == OutcomeStatus::Refused);
  CHECK(outcome.error_code == "SimulationGateUnsatisfied");
  CHECK(outcome.attempts == 0);
  CHECK(*bench.invocations == 0);
}

TEST_CASE("a passing simulation verdict for the same step opens the gate") {
  Bench bench;
  auto call = call_to("act", {{"step", 1}}, "k-act");
  call.origin_step = "E3";
  call.sim_verdict_ref = bench.sim_verdict("E3");
  CHECK(bench.run(call).status == OutcomeStatus::Ok);

  // A verdict for a different step does not transfer.
  auto other = call_to("act", {{"step", 2}}, "k-act2");
  other.origin_step = "E4";
  other.sim_verdict_ref = bench.sim_verdict("E3");
  CHECK(bench.run(other).status == OutcomeStatus::Refused);
}

TEST_CASE("transient failures are retried to success within retry_max") {
  Bench bench;
  auto flaky_left = std::make_shared<int>(2); // scripted flaky adapter fixture
  bench.gw->register_adapter("record", "1",
                             [flaky_left](const json&, Tick, std::uint64_t) {
                               if (*flaky_left > 0) {
                                 --*flaky_left;
                                 return gateway::AdapterResult{std::nullopt, "transient", 1};
                               }
                               return gateway::AdapterResult{
                                   std::make_optional<json>(json{{"ok", true}}), std::nullopt, 1};
                             });
  const auto outcome = bench.run(call_to("record", {{"n", 5}}, "key-flake"));
  CHECK(outcome.status == OutcomeStatus::Ok);
  CHECK(outcome.attempts == 3);
}

TEST_CASE("retries happen only for keyed calls and only on transient codes") {
  Bench bench;
  bench.gw->register_adapter("probe", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::nullopt, "transient", 1};
  });
  const auto unkeyed = bench.run(call_to("probe", {{"n", 1}}));
  CHECK(unkeyed.status == OutcomeStatus::ToolError);
  CHECK(unkeyed.attempts == 1); // no key, no retry

  bench.gw->register_adapter("record", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::nullopt, "hard_fault", 1};
  });
  const auto hard = bench.run(call_to("record", {{"n", 1}}, "k"));
  CHECK(hard.status == OutcomeStatus::ToolError);
  CHECK(hard.attempts == 1); // undeclared code, no retry
}

TEST_CASE("backoff schedule is a deterministic function of the seed") {
  const auto a1 = gateway::backoff_ticks(9, "call-x", 1);
  const auto a2 = gateway::backoff_ticks(9, "call-x", 1);
  CHECK(a1 == a2);
  CHECK(a1 == 1); // base 1, jitter mod 1 == 0
  const auto b = gateway::backoff_ticks(9, "call-x", 3);
  CHECK(b >= 4);
  CHECK(b < 8); // base 4 plus jitter < 4
}

TEST_CASE("adapters exceeding their tick budget time out") {
  Bench bench;
  bench.gw->register_adapter("probe", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::make_optional<json>(json{{"late", true}}), std::nullopt,
                                  500};
  });
  const auto outcome = bench.run(call_to("probe"));
  CHECK(outcome.status == OutcomeStatus::TimedOut);
  CHECK(outcome.error_code == "timeout");
}

// ---------------------------------------------------------------------------
// Circuit breaker

TEST_CASE("breaker state machine follows the tick-stepped oracle") {
  gateway::BreakerState state;
  state.tool_name = "t";
  state.failure_threshold = 3;
  state.cooldown = 8;

  // Closed admits.
  CHECK(gateway::breaker_admit(state, 0).admit);

  // Three consecutive failures open it.
  for (int i = 0; i < 3; ++i) state = gateway::breaker_on_result(state, false, 10);
  CHECK(state.phase == gateway::BreakerPhase::Open);
  CHECK(state.consecutive_failures == 3);

  // Denied inside the cooldown window.
  const auto denied = gateway::breaker_admit(state, 15);
  CHECK_FALSE(denied.admit);

  // After the cooldown one probe passes, a second is refused.
  auto probe = gateway::breaker_admit(state, 18);
  CHECK(probe.admit);
  CHECK(probe.next.phase == gateway::BreakerPhase::HalfOpen);
  const auto second = gateway::breaker_admit(probe.next, 18);
  CHECK_FALSE(second.admit);

  // Probe success closes and zeroes the failure count.
  const auto closed = gateway::breaker_on_result(probe.next, true, 19);
  CHECK(closed.phase == gateway::BreakerPhase::Closed);
  CHECK(closed.consecutive_failures == 0);

  // Probe failure reopens with a refreshed opened_at.
  auto reopened = gateway::breaker_on_result(probe.next, false, 19);
  CHECK(reopened.phase == gateway::BreakerPhase::Open);
  CHECK(reopened.opened_at == 19);
}

TEST_CASE("the gateway opens a breaker after consecutive tool errors") {
  gateway::GatewayConfig config;
  config.breaker_failure_threshold = 3;
  config.breaker_cooldown = 100;
  Bench bench(std::move(config));
  bench.gw->register_adapter("probe", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::nullopt, "hard", 1};
  });
  for (int i = 0; i < 3; ++i) {
    CHECK(bench.run(call_to("probe")).status == OutcomeStatus::ToolError);
  }
  const auto blocked = bench.run(call_to("probe"));
  CHECK(blocked.status == OutcomeStatus::BreakerOpen);
  CHECK(blocked.attempts == 0);
}

// ---------------------------------------------------------------------------
// Rate limiting

TEST_CASE("rate limiting is window-exact against a brute-force scan") {
  contracts::ToolRegistry registry;
  auto spec = simple_spec("busy", ToolScope::ReadOnly);
  spec.rate_limit = {3, 10};
  registry.add(spec);
  LogicalClock clock;
  audit::AuditLog log(&clock);
  gateway::Gateway gw(registry, log, clock, {});
  gw.register_adapter("busy", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::make_optional<json>(json::object()), std::nullopt, 0};
  });
  const auto token = broad_token();

  Rng rng(55);
  std::uint64_t admitted = 0, limited = 0;
  for (int i = 0; i < 60; ++i) {
    const auto outcome =
        gw.execute(permitted(*registry.find("busy", "1"), call_to("busy"), token, clock.now()), 1);
    if (outcome.status == OutcomeStatus::Ok) ++admitted;
    if (outcome.status == OutcomeStatus::RateLimited) ++limited;
    clock.advance(rng.next(4)); // 0..3 ticks between submissions
  }
  CHECK(admitted > 0);
  CHECK(limited > 0);
  CHECK(oracle::rate_windows_hold(log.events(), "busy", 3, 10));
}

// ---------------------------------------------------------------------------
// Saga compensation

namespace {

struct SagaBench : Bench {
  std::shared_ptr<std::vector<std::int64_t>> undo_order =
      std::make_shared<std::vector<std::int64_t>>();

  SagaBench() {
    gw->register_adapter("undo", "1",
                         [order = undo_order](const json& args, Tick, std::uint64_t) {
                           order->push_back(args.value("step", std::int64_t{0}));
                           return gateway::AdapterResult{
                               std::make_optional<json>(json{{"undone", true}}), std::nullopt, 1};
                         });
  }

  /// Builds a saga of `k` executed steps with failure injected at step `j`
  /// (1-based); steps before j succeed and are Done.
  gateway::SagaLog drive(int k, int j) {
    gateway::SagaLog saga{"saga-test", {}};
    for (int i = 1; i <= k; ++i) {
      const std::string step = "s" + std::to_string(i);
      auto call = call_to("act", {{"step", i}, {"fail", i == j}}, "k-" + step);
      call.origin_step = step;
      call.sim_verdict_ref = sim_verdict(step);
      gateway::SagaEntry entry;
      entry.step_id = step;
      entry.intent = call;
      auto undo = call_to("undo", {{"step", i}}, "u-" + step);
      undo.origin_step = step;
      entry.compensation = undo;
      entry.status = gateway::SagaStatus::Intended;
      saga.entries.push_back(entry);

      const auto outcome = run(call);
      if (outcome.status == OutcomeStatus::Ok) {
        saga.entries.back().status = gateway::SagaStatus::Done;
      } else {
        saga.entries.back().status = gateway::SagaStatus::Failed;
        break;
      }
    }
    return saga;
  }
};

} // namespace

TEST_CASE("a three-step saga failing at step three compensates two then one") {
  SagaBench bench;
  auto saga = bench.drive(3, 3);
  saga = bench.gw->compensate(std::move(saga), 1);
  CHECK(*bench.undo_order == std::vector<std::int64_t>{2, 1});
  CHECK(saga.entries[0].status == gateway::SagaStatus::Compensated);
  CHECK(saga.entries[1].status == gateway::SagaStatus::Compensated);
  CHECK(saga.entries[2].status == gateway::SagaStatus::Failed);
}

TEST_CASE("a saga with no Done entries is returned unchanged") {
  SagaBench bench;
  auto saga = bench.drive(2, 1); // first step already fails
  const auto before = saga.entries.size();
  saga = bench.gw->compensate(std::move(saga), 1);
  CHECK(bench.undo_order->empty());
  CHECK(saga.entries.size() == before);
  CHECK(saga.entries[0].status == gateway::SagaStatus::Failed);
}

TEST_CASE("a failing compensation halts the walk and escalates") {
  SagaBench bench;
  auto saga = bench.drive(3, 3);
  // Step 2's compensation is scripted to fail.
  bench.gw->register_adapter("undo", "1",
                             [order = bench.undo_order](const json& args, Tick, std::uint64_t) {
                               const auto step = args.value("step", std::int64_t{0});
                               if (step == 2) {
                                 return gateway::AdapterResult{std::nullopt, "stuck", 1};
                               }
                               order->push_back(step);
                               return gateway::AdapterResult{
                                   std::make_optional<json>(json{{"undone", true}}),
                                   std::nullopt, 1};
                             });
  saga = bench.gw->compensate(std::move(saga), 1);
  CHECK(bench.undo_order->empty()); // step 1 never compensated
  CHECK(saga.entries[0].status == gateway::SagaStatus::Done);
  bool failed_logged = false, escalated = false;
  for (const auto& event : bench.log.events()) {
    if (event.kind == "CompensationFailed" &&
        event.payload.value("step_id", std::string{}) == "s2") {
      failed_logged = true;
    }
    if (failed_logged && event.kind == "Escalation") escalated = true;
  }
  CHECK(failed_logged);
  CHECK(escalated);
}

TEST_CASE("entries without a compensation are flagged, not silently skipped") {
  SagaBench bench;
  auto saga = bench.drive(2, 0); // both steps succeed, no failure
  saga.entries[0].compensation.reset();
  saga = bench.gw->compensate(std::move(saga), 1);
  CHECK(*bench.undo_order == std::vector<std::int64_t>{2});
  bool flagged = false;
  for (const auto& event : bench.log.events()) {
    if (event.kind == "NonCompensatable" &&
        event.payload.value("step_id", std::string{}) == "s1") {
      flagged = true;
    }
  }
  CHECK(flagged);
}

// ---------------------------------------------------------------------------
// Dual control

TEST_CASE("irreversible scope needs an approval, recorded either way") {
  gateway::GatewayConfig granting;
  granting.approval = [](const contracts::ToolCall&) { return true; };
  Bench yes(std::move(granting));
  auto call = call_to("wipe", json::object(), "k-wipe");
  call.origin_step = "W";
  call.sim_verdict_ref = yes.sim_verdict("W");
  CHECK(yes.run(call).status == OutcomeStatus::Ok);
  bool granted = false;
  for (const auto& event : yes.log.events()) {
    if (event.kind == "ApprovalGranted") granted = true;
  }
  CHECK(granted);

  Bench no; // no approval hook configured: auto-deny
  auto denied_call = call_to("wipe", json::object(), "k-wipe");
  denied_call.origin_step = "W";
  denied_call.sim_verdict_ref = no.sim_verdict("W");
  const auto denied = no.run(denied_call);
  CHECK(denied.status == OutcomeStatus::Refused);
  CHECK(denied.error_code == "ApprovalDenied");
  CHECK(*no.invocations == 0);
}

// ---------------------------------------------------------------------------
// Determinism

TEST_CASE("fixed seed and scripts give byte-identical outcome sequences") {
  const auto fixed_call = [](std::string id, std::string tool, json args,
                             std::optional<std::string> key) {
    auto call = call_to(std::move(tool), std::move(args), std::move(key));
    call.call_id = std::move(id);
    return call;
  };
  const auto run_once = [&] {
    Bench bench;
    auto flaky = std::make_shared<int>(1);
    bench.gw->register_adapter("record", "1",
                               [flaky](const json&, Tick, std::uint64_t) {
                                 if (*flaky > 0) {
                                   --*flaky;
                                   return gateway::AdapterResult{std::nullopt, "transient", 2};
                                 }
                                 return gateway::AdapterResult{
                                     std::make_optional<json>(json{{"ok", 1}}), std::nullopt, 2};
                               });
    json outcomes = json::array();
    outcomes.push_back(gateway::to_document(
        bench.run(fixed_call("d1", "record", {{"n", 1}}, "k1"), 7)));
    outcomes.push_back(
        gateway::to_document(bench.run(fixed_call("d2", "probe", {{"n", 2}}, std::nullopt), 7)));
    return canonical_dump(outcomes);
  };
  CHECK(run_once() == run_once());
}
