#include "agentkernel/harness.hpp"

#include <algorithm>
#include <memory>

namespace agentkernel::harness {

namespace {

using contracts::FieldKind;
using contracts::FieldSchema;
using contracts::ToolScope;
using contracts::ToolSpec;

FieldSchema text_field(std::string name, bool required = true,
                       std::optional<std::size_t> max_length = {}) {
  FieldSchema field;
  field.name = std::move(name);
  field.kind = FieldKind::Text;
  field.required = required;
  field.max_length = max_length;
  return field;
}

FieldSchema decimal_field(std::string name, std::optional<double> min = {},
                          std::optional<double> max = {}, bool required = true) {
  FieldSchema field;
  field.name = std::move(name);
  field.kind = FieldKind::Decimal;
  field.required = required;
  field.min = min;
  field.max = max;
  return field;
}

FieldSchema enum_field(std::string name, std::vector<json> allowed, bool required = true) {
  FieldSchema field;
  field.name = std::move(name);
  field.kind = FieldKind::Enumeration;
  field.required = required;
  field.allowed = std::move(allowed);
  return field;
}

ToolSpec make_spec(std::string name, ToolScope scope, std::vector<FieldSchema> schema,
                   Tick timeout = 10) {
  ToolSpec spec;
  spec.name = std::move(name);
  spec.version = "1";
  spec.scope = scope;
  spec.arg_schema = std::move(schema);
  spec.timeout = timeout;
  spec.requires_idempotency_key = !contracts::scope_leq(scope, ToolScope::Simulate);
  spec.transient_error_codes = {"transient"};
  return spec;
}

} // namespace

contracts::ToolRegistry mock_tool_registry() {
  contracts::ToolRegistry registry;

  ToolSpec telemetry = make_spec("telemetry_query", ToolScope::ReadOnly,
                                 {text_field("vehicle_id")});
  telemetry.rate_limit = {8, 16};
  registry.add(std::move(telemetry));

  registry.add(make_spec("firmware_status", ToolScope::ReadOnly, {text_field("vehicle_id")}));

  registry.add(make_spec("twin_simulate", ToolScope::Simulate,
                         {decimal_field("max_temp"), decimal_field("charge_rate"),
                          decimal_field("ambient")}));

  registry.add(make_spec("derate_command", ToolScope::ActuateReversible,
                         {text_field("vehicle_id"),
                          decimal_field("derate_fraction", 0.0, 0.5),
                          text_field("reason", false, 200)}));

  registry.add(make_spec("restore_command", ToolScope::ActuateReversible,
                         {text_field("vehicle_id")}));

  registry.add(make_spec("schedule_service", ToolScope::ActuateReversible,
                         {text_field("vehicle_id"),
                          enum_field("priority", {json("low"), json("normal"), json("high")}),
                          text_field("note", false, 400)}));

  registry.add(make_spec("cancel_service", ToolScope::ActuateReversible,
                         {text_field("ticket_id")}));

  registry.add(make_spec("calc", ToolScope::ReadOnly,
                         {enum_field("op", {json("add"), json("sub"), json("mul"), json("div")}),
                          decimal_field("a"), decimal_field("b")},
                         5));
  return registry;
}

contracts::CapabilityToken default_executor_token() {
  contracts::CapabilityToken token;
  token.token_id = "tok-executor";
  token.subject = "executor";
  token.tool_allowlist = {"telemetry_*", "firmware_status", "twin_simulate",
                          "derate_command",  "restore_command", "schedule_service",
                          "cancel_service",  "calc"};
  token.scope_ceiling = contracts::ToolScope::ActuateReversible;
  token.parameter_caps["derate_fraction"] = contracts::ParameterCap{0.4, {}};
  token.expiry = 1'000'000;
  token.max_invocations = 1'000;
  return token;
}

// ---------------------------------------------------------------------------
// Adapters

namespace {

double clamp01(double v) { return std::max(0.0, std::min(1.0, v)); }

gateway::ToolAdapter telemetry_adapter(json fixture) {
  return [fixture](const json&, Tick, std::uint64_t) -> gateway::AdapterResult {
    return {std::make_optional<json>(fixture), std::nullopt, 2};
  };
}

gateway::ToolAdapter firmware_adapter(json fixture) {
  return [fixture](const json&, Tick, std::uint64_t) -> gateway::AdapterResult {
    return {std::make_optional<json>(fixture), std::nullopt, 1};
  };
}

gateway::ToolAdapter twin_adapter(json risk_table) {
  return [risk_table](const json& args, Tick, std::uint64_t) -> gateway::AdapterResult {
    const double risk = clamp01(risk_table.value("w_max_temp", 0.0) * args.value("max_temp", 0.0) +
                                risk_table.value("w_charge_rate", 0.0) * args.value("charge_rate", 0.0) +
                                risk_table.value("w_ambient", 0.0) * args.value("ambient", 0.0) +
                                risk_table.value("bias", 0.0));
    return {json{{"risk", risk}, {"horizon_ticks", 24}}, std::nullopt, 3};
  };
}

gateway::AdapterResult derate_adapter(const json& args) {
  return {json{{"applied", true},
               {"vehicle_id", args.value("vehicle_id", std::string{})},
               {"derate_fraction", args.value("derate_fraction", 0.0)}},
          std::nullopt, 2};
}

gateway::AdapterResult restore_adapter(const json& args) {
  return {json{{"restored", true}, {"vehicle_id", args.value("vehicle_id", std::string{})}},
          std::nullopt, 2};
}

gateway::AdapterResult schedule_adapter(const json& args) {
  const std::string ticket = "T-" + canonical_hash(args).substr(0, 8);
  return {json{{"ticket_id", ticket}, {"priority", args.value("priority", std::string{"normal"})}},
          std::nullopt, 2};
}

gateway::AdapterResult cancel_adapter(const json& args) {
  return {json{{"cancelled", true}, {"ticket_id", args.value("ticket_id", std::string{})}},
          std::nullopt, 1};
}

gateway::AdapterResult calc_adapter(const json& args) {
  const std::string op = args.value("op", std::string{});
  const double a = args.value("a", 0.0);
  const double b = args.value("b", 0.0);
  if (op == "div" && b == 0.0) {
    return {std::nullopt, "division_by_zero", 1};
  }
  double value = 0.0;
  if (op == "add") value = a + b;
  else if (op == "sub") value = a - b;
  else if (op == "mul") value = a * b;
  else if (op == "div") value = a / b;
  return {json{{"value", value}}, std::nullopt, 1};
}

/// Applies a tool's fault injections on top of its base adapter, counting
/// adapter invocations (schema_mismatch is handled at call construction, not
/// here).
gateway::ToolAdapter with_faults(const std::string& tool, gateway::ToolAdapter base,
                                 const std::vector<FaultInjection>& faults) {
  std::vector<FaultInjection> mine;
  for (const auto& fault : faults) {
    if (fault.target_tool == tool && fault.mode != FaultMode::SchemaMismatch) {
      mine.push_back(fault);
    }
  }
  if (mine.empty()) return base;
  auto counter = std::make_shared<std::uint64_t>(0);
  return [tool, base, mine, counter](const json& args, Tick budget,
                                     std::uint64_t seed) -> gateway::AdapterResult {
    const std::uint64_t index = (*counter)++;
    for (const auto& fault : mine) {
      switch (fault.mode) {
      case FaultMode::TransientFlake:
        if (index == fault.at_call_index) return {std::nullopt, "transient", 1};
        break;
      case FaultMode::PermanentFailure:
        if (index >= fault.at_call_index) return {std::nullopt, "permanent_failure", 1};
        break;
      case FaultMode::MissingData: {
        if (index == fault.at_call_index) {
          gateway::AdapterResult r = base(args, budget, seed);
          r.result = json::object(); // fields the verifier expects are gone
          return r;
        }
        break;
      }
      case FaultMode::SchemaMismatch:
        break;
      }
    }
    return base(args, budget, seed);
  };
}

} // namespace

void register_mock_adapters(gateway::Gateway& gw, const ScenarioConfig& config) {
  const json telemetry = config.fixtures.value("telemetry", json::object());
  const json firmware = config.fixtures.value("firmware", json::object());
  const json risk_table = config.fixtures.value("risk_table", json::object());

  const auto add = [&](const std::string& name, gateway::ToolAdapter adapter) {
    gw.register_adapter(name, "1", with_faults(name, std::move(adapter), config.faults));
  };
  add("telemetry_query", telemetry_adapter(telemetry));
  add("firmware_status", firmware_adapter(firmware));
  add("twin_simulate", twin_adapter(risk_table));
  add("derate_command", [](const json& args, Tick, std::uint64_t) { return derate_adapter(args); });
  add("restore_command", [](const json& args, Tick, std::uint64_t) { return restore_adapter(args); });
  add("schedule_service", [](const json& args, Tick, std::uint64_t) { return schedule_adapter(args); });
  add("cancel_service", [](const json& args, Tick, std::uint64_t) { return cancel_adapter(args); });
  add("calc", [](const json& args, Tick, std::uint64_t) { return calc_adapter(args); });
}

// ---------------------------------------------------------------------------
// The scripted diagnosis plan

planner::Plan diagnosis_plan(const ScenarioConfig& config) {
  using contracts::ToolCall;
  using planner::PlanStep;

  PlanStep e1;
  e1.step_id = "E1";
  e1.description = "retrieve fine-grained thermal map";
  e1.call_template.tool_name = "telemetry_query";
  e1.call_template.tool_version = "1";
  e1.call_template.args = json{{"vehicle_id", config.vehicle_id}};
  e1.postconditions.push_back({"thermal.max_temp", PredicateOp::Exists, json()});
  e1.cost_estimate = 1;

  PlanStep e2;
  e2.step_id = "E2";
  e2.description = "simulate thermal risk on the digital twin";
  e2.call_template.tool_name = "twin_simulate";
  e2.call_template.tool_version = "1";
  e2.call_template.args = json{{"max_temp", "#E1.thermal.max_temp"},
                               {"charge_rate", "#E1.thermal.charge_rate"},
                               {"ambient", "#E1.thermal.ambient"}};
  e2.postconditions.push_back({"risk", PredicateOp::Exists, json()});
  e2.cost_estimate = 2;

  PlanStep e3;
  e3.step_id = "E3";
  e3.description = "derate operating mode while risk is elevated";
  e3.call_template.tool_name = "derate_command";
  e3.call_template.tool_version = "1";
  e3.call_template.args = json{{"vehicle_id", config.vehicle_id},
                               {"derate_fraction", config.derate_fraction},
                               {"reason", "thermal risk mitigation"}};
  e3.preconditions.push_back({"E2.risk", PredicateOp::Gt, json(config.derate_risk_threshold)});
  e3.postconditions.push_back({"applied", PredicateOp::Eq, json(true)});
  ToolCall restore;
  restore.tool_name = "restore_command";
  restore.tool_version = "1";
  restore.args = json{{"vehicle_id", config.vehicle_id}};
  e3.compensation_template = restore;
  e3.cost_estimate = 3;

  PlanStep e4;
  e4.step_id = "E4";
  e4.description = "raise a priority service ticket";
  e4.call_template.tool_name = "schedule_service";
  e4.call_template.tool_version = "1";
  e4.call_template.args = json{{"vehicle_id", config.vehicle_id},
                               {"priority", "high"},
                               {"note", "over-temperature mitigation; plan a service stop"}};
  e4.preconditions.push_back({"E2.risk", PredicateOp::Gt, json(config.derate_risk_threshold)});
  e4.postconditions.push_back({"ticket_id", PredicateOp::Exists, json()});
  ToolCall cancel;
  cancel.tool_name = "cancel_service";
  cancel.tool_version = "1";
  cancel.args = json{{"ticket_id", "#E4.ticket_id"}};
  e4.compensation_template = cancel;
  e4.cost_estimate = 2;

  return planner::Plan::make("plan-diagnosis-" + config.vehicle_id, "over_temperature",
                             {e1, e2, e3, e4});
}

} // namespace agentkernel::harness
