#include "agentkernel/planner.hpp"

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace agentkernel;
using namespace aktest;
using contracts::ToolScope;
using planner::PlanErrorCode;

namespace {

contracts::ToolRegistry plan_registry() {
  contracts::ToolRegistry registry;
  registry.add(simple_spec("fetch", ToolScope::ReadOnly,
                           {field("q", contracts::FieldKind::Text, false)}));
  registry.add(simple_spec("act", ToolScope::ActuateReversible,
                           {field("v", contracts::FieldKind::Decimal, false)}));
  registry.add(simple_spec("undo", ToolScope::ActuateReversible, {}));
  return registry;
}

planner::PlanStep step(std::string id, std::string tool, json args, std::uint64_t cost = 1) {
  planner::PlanStep s;
  s.step_id = std::move(id);
  s.call_template = call_to(std::move(tool), std::move(args));
  s.cost_estimate = cost;
  if (s.call_template.tool_name != "fetch") {
    s.compensation_template = call_to("undo");
  }
  return s;
}

assurance::Budget wide_budget() {
  assurance::Budget b;
  b.max_steps = 100;
  b.max_cost_units = 100;
  b.max_wall_ticks = 100000;
  return b;
}

} // namespace

TEST_CASE("placeholders parse from hash-prefixed strings") {
  const auto p = planner::parse_placeholder(json("#E1.risk"));
  REQUIRE(p.has_value());
  CHECK(p->source_step == "E1");
  CHECK(p->output_path == "risk");
  CHECK(planner::parse_placeholder(json("#E2")).has_value());
  CHECK_FALSE(planner::parse_placeholder(json("plain")).has_value());
  CHECK_FALSE(planner::parse_placeholder(json("##literal")).has_value());
  CHECK_FALSE(planner::parse_placeholder(json(7)).has_value());
}

TEST_CASE("an empty plan validates at zero cost") {
  const auto plan = planner::Plan::make("p0", "goal", {});
  CHECK(plan.total_cost_estimate == 0);
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  CHECK(errors.empty());
}

TEST_CASE("forward references are dangling placeholders") {
  // Two steps: the first references the second's output (topological-order
  // oracle: bind order equals list order, so this can never resolve).
  auto s1 = step("A", "fetch", {{"q", "#B.out"}});
  auto s2 = step("B", "fetch", {{"q", "hello"}});
  const auto plan = planner::Plan::make("p", "g", {s1, s2});
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].code == PlanErrorCode::DanglingPlaceholder);
  CHECK(errors[0].step_id == "A");
}

TEST_CASE("unknown source steps are dangling placeholders") {
  const auto plan =
      planner::Plan::make("p", "g", {step("A", "fetch", {{"q", "#ghost.out"}})});
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].code == PlanErrorCode::DanglingPlaceholder);
}

TEST_CASE("mutual references are reported as a cycle") {
  auto s1 = step("A", "fetch", {{"q", "#B.out"}});
  auto s2 = step("B", "fetch", {{"q", "#A.out"}});
  const auto plan = planner::Plan::make("p", "g", {s1, s2});
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  REQUIRE(errors.size() == 2);
  CHECK(errors[0].code == PlanErrorCode::CyclicPlan);
  CHECK(errors[1].code == PlanErrorCode::CyclicPlan);
}

TEST_CASE("plan cost above the budget is rejected") {
  auto s1 = step("A", "fetch", {{"q", "x"}}, 60);
  auto s2 = step("B", "fetch", {{"q", "y"}}, 60);
  const auto plan = planner::Plan::make("p", "g", {s1, s2});
  CHECK(plan.total_cost_estimate == 120);
  assurance::Budget budget = wide_budget();
  budget.max_cost_units = 100;
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), budget, 0);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].code == PlanErrorCode::CostExceedsBudget);
}

TEST_CASE("actuating steps must carry a compensation") {
  auto naked = step("A", "act", {{"v", 0.1}});
  naked.compensation_template.reset();
  const auto plan = planner::Plan::make("p", "g", {naked});
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].code == PlanErrorCode::MissingCompensation);
}

TEST_CASE("per-step authorization dry runs consume nothing") {
  auto token = broad_token();
  token.max_invocations = 1; // a dry run must not eat the single grant
  const auto plan = planner::Plan::make(
      "p", "g", {step("A", "fetch", {{"q", "x"}}), step("B", "fetch", {{"q", "y"}})});
  const auto errors = planner::validate_plan(plan, plan_registry(), token, wide_budget(), 0);
  CHECK(errors.empty());
  CHECK(token.invocations_used == 0);
}

TEST_CASE("step errors are exhaustive and ordered by step") {
  auto s1 = step("A", "ghost_tool", {});
  auto s2 = step("B", "act", {{"v", "not-a-number"}});
  const auto plan = planner::Plan::make("p", "g", {s1, s2});
  const auto errors = planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0);
  REQUIRE(errors.size() == 2);
  CHECK(errors[0].step_id == "A");
  CHECK(errors[0].code == PlanErrorCode::UnknownTool);
  CHECK(errors[1].step_id == "B");
  CHECK(errors[1].code == PlanErrorCode::StepInvalidArgs);
}

// ---------------------------------------------------------------------------
// Binding

TEST_CASE("binding a placeholder-free step returns the template verbatim") {
  const auto s = step("A", "fetch", {{"q", "text"}});
  const auto bound = planner::bind_step(s, {});
  REQUIRE(std::holds_alternative<contracts::ToolCall>(bound));
  CHECK(std::get<contracts::ToolCall>(bound).args == s.call_template.args);
}

TEST_CASE("binding substitutes resolved output values without transformation") {
  const auto s = step("A", "act", {{"v", "#E1.risk"}});
  const std::map<std::string, json> outputs{{"E1", json{{"risk", 0.7}}}};
  const auto bound = planner::bind_step(s, outputs);
  REQUIRE(std::holds_alternative<contracts::ToolCall>(bound));
  const auto& args = std::get<contracts::ToolCall>(bound).args;
  CHECK(args.at("v") == json(0.7)); // a number, not a string
}

TEST_CASE("binding reports missing outputs and missing paths") {
  const auto s = step("A", "act", {{"v", "#E1.risk"}});
  const auto missing_output = planner::bind_step(s, {});
  REQUIRE(std::holds_alternative<planner::BindError>(missing_output));
  CHECK(std::get<planner::BindError>(missing_output).code ==
        planner::BindErrorCode::MissingOutput);

  const std::map<std::string, json> outputs{{"E1", json{{"other", 1}}}};
  const auto missing_path = planner::bind_step(s, outputs);
  REQUIRE(std::holds_alternative<planner::BindError>(missing_path));
  CHECK(std::get<planner::BindError>(missing_path).code == planner::BindErrorCode::PathNotFound);
}

TEST_CASE("escaped hash strings bind to literals") {
  const auto s = step("A", "fetch", {{"q", "##hashtag"}});
  const auto bound = planner::bind_step(s, {});
  CHECK(std::get<contracts::ToolCall>(bound).args.at("q") == json("#hashtag"));
}

TEST_CASE("plans accepted by validate_plan always bind in list order") {
  // Static resolvability implies dynamic bindability given conforming
  // adapter results.
  const auto s1 = step("E1", "fetch", {{"q", "query"}});
  const auto s2 = step("E2", "act", {{"v", "#E1.value"}});
  const auto plan = planner::Plan::make("p", "g", {s1, s2});
  REQUIRE(planner::validate_plan(plan, plan_registry(), broad_token(), wide_budget(), 0).empty());

  std::map<std::string, json> outputs;
  outputs["E1"] = json{{"value", 3.5}}; // schema-conforming result
  for (const auto& s : plan.steps) {
    const auto bound = planner::bind_step(s, outputs);
    CHECK(std::holds_alternative<contracts::ToolCall>(bound));
    if (s.step_id == "E2") {
      CHECK(std::get<contracts::ToolCall>(bound).args.at("v") == json(3.5));
    }
  }
}

TEST_CASE("plans round-trip through their document form") {
  const auto plan = planner::Plan::make(
      "p", "goal", {step("E1", "fetch", {{"q", "x"}}), step("E2", "act", {{"v", "#E1.v"}}, 3)});
  const auto doc = planner::to_document(plan);
  const auto back = planner::plan_from_document(doc);
  CHECK(back.plan_id == plan.plan_id);
  CHECK(back.total_cost_estimate == plan.total_cost_estimate);
  CHECK(planner::to_document(back) == doc);
}

// ---------------------------------------------------------------------------
// Governed react loop

namespace {

planner::Governor approving_governor() {
  return [](const contracts::ToolCall& call) -> std::variant<planner::GovernorApproval,
                                                             planner::GovernorRefusal> {
    return planner::GovernorApproval{json{{"observed", call.tool_name}}};
  };
}

} // namespace

TEST_CASE("a non-terminating proposer halts at exactly the step cap") {
  for (const std::uint64_t cap : {std::uint64_t{1}, std::uint64_t{5}}) {
    planner::ReactState state;
    const planner::Proposer proposer = [](const planner::ReactState&, std::uint64_t) {
      return planner::Proposal{call_to("fetch", {{"q", "more"}})};
    };
    const auto why = planner::run_react(state, proposer, approving_governor(), {cap, 3, 0});
    CHECK(why.code == assurance::WhyStoppedCode::BudgetExceeded);
    CHECK(state.steps_taken == cap); // counting oracle: one step per dispatch
    std::uint64_t actions = 0;
    for (const auto& entry : state.transcript) {
      if (entry.kind == planner::EntryKind::Action) ++actions;
    }
    CHECK(actions == cap);
  }
}

TEST_CASE("an ill-typed proposal is refused and the proposer consulted again") {
  planner::ReactState state;
  int proposals = 0;
  const planner::Proposer proposer = [&proposals](const planner::ReactState&, std::uint64_t) {
    ++proposals;
    if (proposals == 1) return planner::Proposal{call_to("hallucinated_tool")};
    return planner::Proposal{call_to("fetch", {{"q", "real"}})};
  };
  const planner::Governor governor =
      [](const contracts::ToolCall& call) -> std::variant<planner::GovernorApproval,
                                                          planner::GovernorRefusal> {
    if (call.tool_name != "fetch") {
      return planner::GovernorRefusal{"UnknownTool", json{{"tool", call.tool_name}}};
    }
    return planner::GovernorApproval{json{{"ok", true}}};
  };
  const auto halted = planner::react_step(state, proposer, governor, {4, 3, 0});
  CHECK_FALSE(halted.has_value());
  CHECK(proposals == 2);
  REQUIRE(state.transcript.size() == 3); // refusal observation, action, observation
  CHECK(state.transcript[0].kind == planner::EntryKind::Observation);
  CHECK(state.transcript[0].payload.value("governed_refusal", false));
  CHECK(state.transcript[1].kind == planner::EntryKind::Action);
  CHECK(state.transcript[2].kind == planner::EntryKind::Observation);
}

TEST_CASE("a valid read-only proposal is dispatched with its observation") {
  planner::ReactState state;
  const planner::Proposer proposer = [](const planner::ReactState&, std::uint64_t) {
    return planner::Proposal{call_to("fetch", {{"q", "status"}})};
  };
  const auto halted = planner::react_step(state, proposer, approving_governor(), {4, 3, 0});
  CHECK_FALSE(halted.has_value());
  REQUIRE(state.transcript.size() == 2);
  CHECK(state.transcript[0].kind == planner::EntryKind::Action);
  CHECK(state.transcript[1].kind == planner::EntryKind::Observation);
  CHECK(state.steps_taken == 1);
}

TEST_CASE("the refusal limit halts with verifier_rejection and a repair hint") {
  planner::ReactState state;
  LogicalClock clock;
  audit::AuditLog log(&clock);
  const planner::Proposer stubborn = [](const planner::ReactState&, std::uint64_t) {
    return planner::Proposal{call_to("forbidden")};
  };
  const planner::Governor governor =
      [](const contracts::ToolCall&) -> std::variant<planner::GovernorApproval,
                                                     planner::GovernorRefusal> {
    return planner::GovernorRefusal{"policy", json{}};
  };
  const auto why = planner::run_react(state, stubborn, governor, {10, 3, 0}, &log);
  CHECK(why.code == assurance::WhyStoppedCode::VerifierRejection);
  std::uint64_t refusals = 0;
  bool hint = false;
  for (const auto& event : log.events()) {
    if (event.kind == "RepairHint") hint = true;
  }
  for (const auto& entry : state.transcript) {
    if (entry.kind == planner::EntryKind::Observation &&
        entry.payload.value("governed_refusal", false)) {
      ++refusals;
    }
  }
  CHECK(refusals == 3);
  CHECK(hint);
}

TEST_CASE("transcripts keep the action/observation pairing grammar") {
  Rng rng(31);
  for (int round = 0; round < 20; ++round) {
    planner::ReactState state;
    const planner::Proposer proposer = [&rng](const planner::ReactState&, std::uint64_t) {
      if (rng.chance(0.3)) return planner::Proposal{planner::Thought{"hmm"}};
      return planner::Proposal{call_to(rng.chance(0.3) ? "bad" : "fetch")};
    };
    const planner::Governor governor =
        [](const contracts::ToolCall& call) -> std::variant<planner::GovernorApproval,
                                                            planner::GovernorRefusal> {
      if (call.tool_name != "fetch") return planner::GovernorRefusal{"policy", json{}};
      return planner::GovernorApproval{json{{"ok", true}}};
    };
    planner::run_react(state, proposer, governor, {6, 2, 0});
    for (std::size_t i = 0; i < state.transcript.size(); ++i) {
      if (state.transcript[i].kind == planner::EntryKind::Action) {
        REQUIRE(i + 1 < state.transcript.size());
        CHECK(state.transcript[i + 1].kind == planner::EntryKind::Observation);
      }
      if (state.transcript[i].kind == planner::EntryKind::Observation &&
          !state.transcript[i].payload.value("governed_refusal", false)) {
        REQUIRE(i >= 1);
        CHECK(state.transcript[i - 1].kind == planner::EntryKind::Action);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Search

namespace {

json tree_doc(std::initializer_list<std::pair<std::string, json>> entries) {
  json doc = json::object();
  for (const auto& [key, value] : entries) doc[key] = value;
  return doc;
}

} // namespace

TEST_CASE("zero expansion budget returns the root as best") {
  const json tree = tree_doc({{"\"root\"", json{{"score", 1.0}}}});
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 0;
  budget.beam_width = 2;
  const auto result = planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget);
  CHECK(result.best.node_id == "n0");
  CHECK(result.why_stopped.code == assurance::WhyStoppedCode::BudgetExhausted);
}

TEST_CASE("a scripted two-level tree finds its unique maximum") {
  const json tree = tree_doc({
      {"\"root\"", json{{"score", 0.1}, {"children", json::array({"a", "b"})}}},
      {"\"a\"", json{{"score", 0.5}, {"children", json::array({"a1", "a2"})}}},
      {"\"b\"", json{{"score", 0.4}, {"children", json::array({"b1"})}}},
      {"\"a1\"", json{{"score", 0.3}}},
      {"\"a2\"", json{{"score", 0.9}}},
      {"\"b1\"", json{{"score", 0.2}}},
  });
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 16;
  budget.beam_width = 2;
  const auto result =
      planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget, nullptr, 16);
  CHECK(result.best.content == json("a2"));
  const auto oracle = aktest::oracle::exhaustive_best(tree, json("root"));
  CHECK(result.best.score == oracle.second);
  CHECK(canonical_dump(result.best.content) == oracle.first);
}

TEST_CASE("all children infeasible stops with contradiction") {
  const json tree = tree_doc({
      {"\"root\"", json{{"score", 0.1}, {"children", json::array({"x", "y"})}}},
      {"\"x\"", json{{"score", 0.9}, {"feasible", false}}},
      {"\"y\"", json{{"score", 0.8}, {"feasible", false}}},
  });
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 8;
  budget.beam_width = 4;
  const auto result = planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget);
  CHECK(result.why_stopped.code == assurance::WhyStoppedCode::Contradiction);
  CHECK(result.best.node_id == "n0"); // infeasible nodes never become best
}

TEST_CASE("leaf exhaustion converges") {
  const json tree = tree_doc({
      {"\"root\"", json{{"score", 0.1}, {"children", json::array({"leaf"})}}},
      {"\"leaf\"", json{{"score", 0.6}}},
  });
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 10;
  budget.beam_width = 2;
  const auto result = planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget);
  CHECK(result.why_stopped.code == assurance::WhyStoppedCode::Convergence);
  CHECK(result.best.content == json("leaf"));
}

TEST_CASE("search traces are deterministic and the controller is logged") {
  const json tree = tree_doc({
      {"\"root\"", json{{"score", 0.0}, {"children", json::array({"a", "b"})}}},
      {"\"a\"", json{{"score", 0.7}}},
      {"\"b\"", json{{"score", 0.3}}},
  });
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 4;
  budget.beam_width = 2;

  const auto run_once = [&] {
    LogicalClock clock;
    audit::AuditLog log(&clock);
    planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget, &log);
    json kinds = json::array();
    for (const auto& event : log.events()) kinds.push_back(event.payload);
    return canonical_dump(kinds);
  };
  CHECK(run_once() == run_once());

  LogicalClock clock;
  audit::AuditLog log(&clock);
  planner::search(json("root"), scripted.proposer(), scripted.scorer(), budget, &log);
  CHECK(log.events().front().kind == "SearchStarted");
  CHECK(log.events().back().kind == "SearchStopped");
}
