#include "agentkernel/assurance.hpp"

#include "doctest.h"
#include "support/test_support.hpp"

using namespace agentkernel;
using namespace aktest;
using assurance::WhyStoppedCode;

TEST_CASE("budget check continues on zero over zero") {
  CHECK_FALSE(assurance::check_budget({}, {}, {}).has_value());
}

TEST_CASE("budget halts at the first violating increment, naming the dimension") {
  assurance::Budget budget;
  budget.max_steps = 10;
  budget.max_cost_units = 1000;
  budget.max_wall_ticks = 1000;
  assurance::BudgetLedger ledger;
  ledger.steps = 9;
  assurance::BudgetLedger inc;
  inc.steps = 1;
  CHECK_FALSE(assurance::check_budget(ledger, budget, inc).has_value());
  ledger.steps = 10;
  const auto halt = assurance::check_budget(ledger, budget, inc);
  REQUIRE(halt.has_value());
  CHECK(halt->code == WhyStoppedCode::BudgetExceeded);
  CHECK(halt->detail == "steps");
}

TEST_CASE("per-tool quotas are enforced by tool name") {
  assurance::Budget budget;
  budget.max_steps = 100;
  budget.max_cost_units = 100;
  budget.max_wall_ticks = 100;
  budget.per_tool_quotas["telemetry_query"] = 3;
  assurance::BudgetLedger ledger;
  assurance::BudgetLedger inc;
  inc.per_tool["telemetry_query"] = 1;
  for (int i = 0; i < 3; ++i) {
    CHECK_FALSE(assurance::check_budget(ledger, budget, inc).has_value());
    ledger += inc;
  }
  const auto halt = assurance::check_budget(ledger, budget, inc);
  REQUIRE(halt.has_value());
  CHECK(halt->detail == "tool:telemetry_query");
}

// ---------------------------------------------------------------------------
// Verifier aggregation

TEST_CASE("empty verifier list passes vacuously but visibly") {
  IdSequence ids{"v"};
  const auto verdict = assurance::verify("subject", json{{"x", 1}}, {}, ids);
  CHECK(verdict.pass);
  REQUIRE(verdict.reason_codes.size() == 1);
  CHECK(verdict.reason_codes[0] == "no_verifiers");
}

TEST_CASE("aggregate fails when any constituent fails, keeping all ids") {
  IdSequence ids{"v"};
  assurance::VerdictStore store;
  LogicalClock clock;
  audit::AuditLog log(&clock);
  const assurance::Verifier pass{"structural", "1", [](const json&) {
                                   return std::make_pair(true, std::vector<std::string>{});
                                 }};
  const assurance::Verifier fail{"range", "1", [](const json&) {
                                   return std::make_pair(false,
                                                         std::vector<std::string>{"out_of_range"});
                                 }};
  const auto verdict = assurance::verify("subject", json{}, {pass, fail}, ids, &store, &log);
  CHECK_FALSE(verdict.pass);
  REQUIRE(verdict.evidence_refs.size() == 2);
  CHECK(store.find(verdict.evidence_refs[0]) != nullptr);
  CHECK(store.find(verdict.evidence_refs[1]) != nullptr);
  CHECK(verdict.reason_codes == std::vector<std::string>{"out_of_range"});
  CHECK(log.size() == 3); // two constituents + aggregate
}

TEST_CASE("a crashing verifier fails closed") {
  IdSequence ids{"v"};
  const assurance::Verifier crash{"crash", "1", [](const json&) -> std::pair<bool, std::vector<std::string>> {
                                    throw std::runtime_error("boom");
                                  }};
  const auto verdict = assurance::verify("subject", json{}, {crash}, ids);
  CHECK_FALSE(verdict.pass);
  CHECK(verdict.reason_codes == std::vector<std::string>{"verifier_error"});
}

// ---------------------------------------------------------------------------
// Supervisor

namespace {

assurance::Verdict verdict_with(bool pass) {
  assurance::Verdict v;
  v.verdict_id = "v-test";
  v.pass = pass;
  if (!pass) v.reason_codes = {"postcondition_failed"};
  return v;
}

} // namespace

TEST_CASE("supervisor truth table over risk and verdict") {
  assurance::SupervisorPolicy policy;
  policy.risk_threshold = 0.5;
  LogicalClock clock;
  audit::AuditLog log(&clock);
  assurance::Supervisor supervisor(policy, &log);
  const auto call = call_to("derate_command", {}, "k");
  using contracts::ToolScope;

  const auto ok = supervisor.supervise_action(call, ToolScope::ActuateReversible, 0.0,
                                              verdict_with(true));
  CHECK(std::holds_alternative<assurance::Authorized>(ok));

  const auto risky = supervisor.supervise_action(call, ToolScope::ActuateReversible, 0.9,
                                                 verdict_with(true));
  REQUIRE(std::holds_alternative<assurance::SafeHalt>(risky));
  CHECK(std::get<assurance::SafeHalt>(risky).explanation.find("risk") != std::string::npos);

  const auto rejected = supervisor.supervise_action(call, ToolScope::ActuateReversible, 0.0,
                                                    verdict_with(false));
  REQUIRE(std::holds_alternative<assurance::SafeHalt>(rejected));
  CHECK(std::get<assurance::SafeHalt>(rejected).explanation.find("postcondition_failed") !=
        std::string::npos);

  const auto both = supervisor.supervise_action(call, ToolScope::ActuateReversible, 0.9,
                                                verdict_with(false));
  CHECK(std::holds_alternative<assurance::SafeHalt>(both));

  // Every SafeHalt above logged a SafeHalt followed by an Escalation.
  std::size_t safe_halts = 0, escalations = 0;
  for (const auto& event : log.events()) {
    if (event.kind == "SafeHalt") ++safe_halts;
    if (event.kind == "Escalation") ++escalations;
  }
  CHECK(safe_halts == 3);
  CHECK(escalations == 3);
}

TEST_CASE("supervision is deterministic") {
  assurance::SupervisorPolicy policy;
  policy.risk_threshold = 0.5;
  assurance::Supervisor supervisor(policy, nullptr);
  const auto call = call_to("x", {}, "k");
  for (int i = 0; i < 10; ++i) {
    const auto a = supervisor.decide_action(call, contracts::ToolScope::Simulate, 0.4,
                                            verdict_with(true));
    CHECK(std::holds_alternative<assurance::Authorized>(a));
  }
}

TEST_CASE("degraded modes move only toward safety without an operator override") {
  LogicalClock clock;
  audit::AuditLog log(&clock);
  assurance::Supervisor supervisor(assurance::SupervisorPolicy{}, &log);
  CHECK(supervisor.mode() == assurance::DegradedMode::Normal);
  CHECK(supervisor.degrade(assurance::DegradedMode::MonitorOnly, "tool flaking"));
  CHECK(supervisor.mode() == assurance::DegradedMode::MonitorOnly);
  CHECK_FALSE(supervisor.degrade(assurance::DegradedMode::Normal, "please relax"));
  CHECK(supervisor.mode() == assurance::DegradedMode::MonitorOnly);
  CHECK(supervisor.degrade(assurance::DegradedMode::Shadow, "worse"));
  supervisor.operator_override(assurance::DegradedMode::Normal, "op-7");
  CHECK(supervisor.mode() == assurance::DegradedMode::Normal);

  bool override_logged = false;
  for (const auto& event : log.events()) {
    if (event.kind == "OperatorOverride") override_logged = true;
  }
  CHECK(override_logged);
}

TEST_CASE("degraded supervisor blocks actuation but not observation") {
  assurance::Supervisor supervisor(assurance::SupervisorPolicy{}, nullptr);
  supervisor.degrade(assurance::DegradedMode::MonitorOnly, "telemetry down");
  const auto call = call_to("derate_command", {}, "k");
  const auto blocked = supervisor.decide_action(call, contracts::ToolScope::ActuateReversible,
                                                0.0, verdict_with(true));
  CHECK(std::holds_alternative<assurance::SafeHalt>(blocked));
  const auto reads = supervisor.decide_action(call, contracts::ToolScope::ReadOnly, 0.0,
                                              verdict_with(true));
  CHECK(std::holds_alternative<assurance::Authorized>(reads));
}

// ---------------------------------------------------------------------------
// Intention gates

TEST_CASE("malformed goals are rejected before feasibility runs") {
  IdSequence intents{"intent-"};
  IdSequence verdicts{"v"};
  const auto result = assurance::adoption_filter(json{{"note", "fix it"}}, {}, intents, verdicts);
  REQUIRE(std::holds_alternative<assurance::GoalRejected>(result));
  CHECK(std::get<assurance::GoalRejected>(result).reason == "MalformedGoal");
}

TEST_CASE("normalized goals with passing feasibility become intentions") {
  IdSequence intents{"intent-"};
  IdSequence verdicts{"v"};
  LogicalClock clock;
  audit::AuditLog log(&clock);
  const json goal{{"objective", json{{"metric", "risk"}, {"target", 0.2}}},
                  {"constraints", json::array()}};
  const assurance::Verifier feasible{"feasibility", "1", [](const json&) {
                                       return std::make_pair(true, std::vector<std::string>{});
                                     }};
  const auto result =
      assurance::adoption_filter(goal, {feasible}, intents, verdicts, nullptr, &log);
  REQUIRE(std::holds_alternative<assurance::Intention>(result));
  bool adopted_logged = false;
  for (const auto& event : log.events()) {
    if (event.kind == "GoalAdopted") adopted_logged = true;
  }
  CHECK(adopted_logged);
}

TEST_CASE("execution monitor fires the first matching reconsideration rule") {
  assurance::Intention intention;
  intention.intention_id = "i1";
  const std::vector<assurance::MonitorRule> rules{
      {assurance::TriggerKind::PreconditionViolated,
       {"telemetry_fresh", PredicateOp::Eq, json(false)}},
      {assurance::TriggerKind::RiskChange, {"risk", PredicateOp::Gt, json(0.5)}},
  };
  CHECK_FALSE(assurance::execution_monitor(intention,
                                           json{{"telemetry_fresh", true}, {"risk", 0.1}}, rules)
                  .has_value());
  const auto trigger = assurance::execution_monitor(
      intention, json{{"telemetry_fresh", false}, {"risk", 0.9}}, rules);
  REQUIRE(trigger.has_value());
  CHECK(trigger->kind == assurance::TriggerKind::PreconditionViolated);
}

TEST_CASE("reconsideration follows the static trigger table") {
  assurance::Intention intention;
  intention.intention_id = "i1";
  assurance::ReconsiderPolicy policy;
  policy.table[assurance::TriggerKind::PreconditionViolated] = assurance::ReconsiderAction::Drop;
  policy.table[assurance::TriggerKind::NewEvidence] = assurance::ReconsiderAction::Suspend;

  const auto drop = assurance::reconsider(
      intention, {assurance::TriggerKind::PreconditionViolated, ""}, policy);
  CHECK(drop == assurance::ReconsiderAction::Drop);
  CHECK(intention.state == assurance::Intention::State::Dropped);

  assurance::Intention other;
  const auto keep =
      assurance::reconsider(other, {assurance::TriggerKind::RiskChange, ""}, policy);
  CHECK(keep == assurance::ReconsiderAction::Keep); // unmapped trigger keeps the intention
  CHECK(other.state == assurance::Intention::State::Active);
}
