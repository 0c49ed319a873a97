#include "agentkernel/assurance.hpp"

#include <stdexcept>

namespace agentkernel::assurance {

std::string_view to_string(WhyStoppedCode code) {
  switch (code) {
  case WhyStoppedCode::GoalSatisfied: return "goal_satisfied";
  case WhyStoppedCode::ConsensusReached: return "consensus_reached";
  case WhyStoppedCode::BudgetExceeded: return "budget_exceeded";
  case WhyStoppedCode::NonConvergence: return "non_convergence";
  case WhyStoppedCode::BudgetExhausted: return "budget_exhausted";
  case WhyStoppedCode::Convergence: return "convergence";
  case WhyStoppedCode::Contradiction: return "contradiction";
  case WhyStoppedCode::SafetyHalt: return "safety_halt";
  case WhyStoppedCode::VerifierRejection: return "verifier_rejection";
  case WhyStoppedCode::Deadlock: return "deadlock";
  case WhyStoppedCode::OperatorAbort: return "operator_abort";
  }
  return "goal_satisfied";
}

WhyStoppedCode why_stopped_from_string(std::string_view text) {
  for (int i = 0; i <= static_cast<int>(WhyStoppedCode::OperatorAbort); ++i) {
    const auto code = static_cast<WhyStoppedCode>(i);
    if (to_string(code) == text) return code;
  }
  throw std::invalid_argument("unknown why_stopped code: " + std::string(text));
}

json to_document(const WhyStopped& why) {
  return json{{"code", std::string(to_string(why.code))}, {"detail", why.detail}};
}

// ---------------------------------------------------------------------------
// Verdicts

json to_document(const Verdict& verdict) {
  return json{{"verdict_id", verdict.verdict_id},
              {"verifier_id", verdict.verifier_id},
              {"verifier_version", verdict.verifier_version},
              {"subject_ref", verdict.subject_ref},
              {"pass", verdict.pass},
              {"reason_codes", verdict.reason_codes},
              {"evidence_refs", verdict.evidence_refs}};
}

Verdict verdict_from_document(const json& doc) {
  Verdict verdict;
  verdict.verdict_id = doc.at("verdict_id").get<std::string>();
  verdict.verifier_id = doc.at("verifier_id").get<std::string>();
  verdict.verifier_version = doc.value("verifier_version", std::string{});
  verdict.subject_ref = doc.at("subject_ref").get<std::string>();
  verdict.pass = doc.at("pass").get<bool>();
  verdict.reason_codes = doc.value("reason_codes", std::vector<std::string>{});
  verdict.evidence_refs = doc.value("evidence_refs", std::vector<std::string>{});
  return verdict;
}

const Verdict& VerdictStore::put(Verdict verdict) {
  auto [it, inserted] = verdicts_.emplace(verdict.verdict_id, std::move(verdict));
  if (!inserted) throw std::logic_error("verdict id reused: " + it->first);
  return it->second;
}

const Verdict* VerdictStore::find(const std::string& verdict_id) const {
  const auto it = verdicts_.find(verdict_id);
  return it == verdicts_.end() ? nullptr : &it->second;
}

Verdict verify(const std::string& subject_ref, const json& subject,
               const std::vector<Verifier>& verifiers, IdSequence& verdict_ids,
               VerdictStore* store, audit::AuditLog* log) {
  Verdict aggregate;
  aggregate.verdict_id = verdict_ids.make();
  aggregate.verifier_id = "aggregate";
  aggregate.verifier_version = "1";
  aggregate.subject_ref = subject_ref;
  aggregate.pass = true;

  if (verifiers.empty()) {
    aggregate.reason_codes.push_back("no_verifiers"); // vacuous pass, made visible
  }
  for (const auto& verifier : verifiers) {
    Verdict part;
    part.verdict_id = verdict_ids.make();
    part.verifier_id = verifier.id;
    part.verifier_version = verifier.version;
    part.subject_ref = subject_ref;
    try {
      auto [pass, reasons] = verifier.check(subject);
      part.pass = pass;
      part.reason_codes = std::move(reasons);
      if (!part.pass && part.reason_codes.empty()) {
        part.reason_codes.push_back("unspecified_failure");
      }
    } catch (const std::exception&) {
      part.pass = false; // fail closed
      part.reason_codes = {"verifier_error"};
    }
    aggregate.pass = aggregate.pass && part.pass;
    for (const auto& reason : part.reason_codes) aggregate.reason_codes.push_back(reason);
    aggregate.evidence_refs.push_back(part.verdict_id);
    if (store) store->put(part);
    if (log) log->append("assurance", "VerdictIssued", to_document(part));
  }
  if (store) store->put(aggregate);
  if (log) log->append("assurance", "VerdictIssued", to_document(aggregate));
  return aggregate;
}

// ---------------------------------------------------------------------------
// Budgets

BudgetLedger& BudgetLedger::operator+=(const BudgetLedger& other) {
  steps += other.steps;
  cost_units += other.cost_units;
  wall_ticks += other.wall_ticks;
  for (const auto& [tool, count] : other.per_tool) per_tool[tool] += count;
  return *this;
}

json to_document(const Budget& budget) {
  return json{{"max_steps", budget.max_steps},
              {"max_cost_units", budget.max_cost_units},
              {"max_wall_ticks", budget.max_wall_ticks},
              {"per_tool_quotas", budget.per_tool_quotas}};
}

Budget budget_from_document(const json& doc) {
  Budget budget;
  budget.max_steps = doc.value("max_steps", std::uint64_t{0});
  budget.max_cost_units = doc.value("max_cost_units", std::uint64_t{0});
  budget.max_wall_ticks = doc.value("max_wall_ticks", Tick{0});
  if (doc.contains("per_tool_quotas")) {
    budget.per_tool_quotas =
        doc.at("per_tool_quotas").get<std::map<std::string, std::uint64_t>>();
  }
  return budget;
}

json to_document(const BudgetLedger& ledger) {
  return json{{"steps", ledger.steps},
              {"cost_units", ledger.cost_units},
              {"wall_ticks", ledger.wall_ticks},
              {"per_tool", ledger.per_tool}};
}

std::optional<WhyStopped> check_budget(const BudgetLedger& ledger, const Budget& budget,
                                       const BudgetLedger& increment) {
  if (ledger.steps + increment.steps > budget.max_steps) {
    return WhyStopped{WhyStoppedCode::BudgetExceeded, "steps"};
  }
  if (ledger.cost_units + increment.cost_units > budget.max_cost_units) {
    return WhyStopped{WhyStoppedCode::BudgetExceeded, "cost_units"};
  }
  if (ledger.wall_ticks + increment.wall_ticks > budget.max_wall_ticks) {
    return WhyStopped{WhyStoppedCode::BudgetExceeded, "wall_ticks"};
  }
  for (const auto& [tool, quota] : budget.per_tool_quotas) {
    const auto used = ledger.per_tool.contains(tool) ? ledger.per_tool.at(tool) : 0;
    const auto inc = increment.per_tool.contains(tool) ? increment.per_tool.at(tool) : 0;
    if (used + inc > quota) {
      return WhyStopped{WhyStoppedCode::BudgetExceeded, "tool:" + tool};
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Supervisor

std::string_view to_string(DegradedMode mode) {
  switch (mode) {
  case DegradedMode::Normal: return "normal";
  case DegradedMode::MonitorOnly: return "monitor_only";
  case DegradedMode::ReadOnly: return "read_only";
  case DegradedMode::Shadow: return "shadow";
  }
  return "normal";
}

DegradedMode degraded_mode_from_string(std::string_view text) {
  if (text == "normal") return DegradedMode::Normal;
  if (text == "monitor_only") return DegradedMode::MonitorOnly;
  if (text == "read_only") return DegradedMode::ReadOnly;
  if (text == "shadow") return DegradedMode::Shadow;
  throw std::invalid_argument("unknown degraded mode: " + std::string(text));
}

bool mode_leq_safety(DegradedMode from, DegradedMode to) {
  return static_cast<int>(from) <= static_cast<int>(to);
}

json to_document(const SupervisorPolicy& policy) {
  json modes = json::array();
  for (const auto mode : policy.degraded_modes) modes.push_back(std::string(to_string(mode)));
  json triggers = json::array();
  for (const auto& predicate : policy.reconsideration_triggers) {
    triggers.push_back(agentkernel::to_document(predicate));
  }
  return json{{"risk_threshold", policy.risk_threshold},
              {"degraded_modes", std::move(modes)},
              {"escalation_target", policy.escalation_target},
              {"reconsideration_triggers", std::move(triggers)}};
}

SupervisorPolicy supervisor_policy_from_document(const json& doc) {
  SupervisorPolicy policy;
  policy.risk_threshold = doc.value("risk_threshold", 1.0);
  if (doc.contains("degraded_modes")) {
    policy.degraded_modes.clear();
    for (const auto& mode : doc.at("degraded_modes")) {
      policy.degraded_modes.push_back(degraded_mode_from_string(mode.get<std::string>()));
    }
  }
  policy.escalation_target = doc.value("escalation_target", std::string{"operator"});
  if (doc.contains("reconsideration_triggers")) {
    for (const auto& trigger : doc.at("reconsideration_triggers")) {
      policy.reconsideration_triggers.push_back(predicate_from_document(trigger));
    }
  }
  return policy;
}

Supervisor::Supervisor(SupervisorPolicy policy, audit::AuditLog* log)
    : policy_(std::move(policy)), log_(log) {}

SuperviseResult Supervisor::decide_action(const contracts::ToolCall& call,
                                          contracts::ToolScope scope, double risk,
                                          const Verdict& verdict) const {
  std::string explanation;
  if (mode_ != DegradedMode::Normal &&
      !contracts::scope_leq(scope, contracts::ToolScope::Simulate)) {
    explanation = "degraded mode " + std::string(to_string(mode_)) + " forbids actuation by call " +
                  call.call_id;
  } else if (risk > policy_.risk_threshold) {
    explanation = "risk " + json(risk).dump() + " exceeds threshold " +
                  json(policy_.risk_threshold).dump() + " for call " + call.call_id;
  } else if (!verdict.pass) {
    explanation = "verifier rejection for call " + call.call_id + ":";
    for (const auto& reason : verdict.reason_codes) explanation += " " + reason;
  }
  if (explanation.empty()) return Authorized{};
  return SafeHalt{explanation, policy_.escalation_target};
}

SuperviseResult Supervisor::supervise_action(const contracts::ToolCall& call,
                                             contracts::ToolScope scope, double risk,
                                             const Verdict& verdict) {
  const SuperviseResult decision = decide_action(call, scope, risk, verdict);
  if (std::holds_alternative<Authorized>(decision)) {
    if (log_) {
      log_->append("assurance", "SupervisorAuthorized",
                   json{{"call_id", call.call_id}, {"risk", risk}, {"verdict", verdict.verdict_id}});
    }
    return decision;
  }
  const SafeHalt& halt = std::get<SafeHalt>(decision);
  if (log_) {
    log_->append("assurance", "SafeHalt",
                 json{{"call_id", call.call_id}, {"explanation", halt.explanation}, {"risk", risk},
                      {"verdict", verdict.verdict_id}});
    log_->append("assurance", "Escalation",
                 json{{"target", policy_.escalation_target}, {"reason", halt.explanation}});
  }
  return decision;
}

SafeHalt Supervisor::safe_halt(const std::string& subject_ref, const std::string& explanation) {
  SafeHalt halt{explanation, policy_.escalation_target};
  if (log_) {
    log_->append("assurance", "SafeHalt",
                 json{{"subject_ref", subject_ref}, {"explanation", explanation}});
    log_->append("assurance", "Escalation",
                 json{{"target", policy_.escalation_target}, {"reason", explanation}});
  }
  return halt;
}

bool Supervisor::degrade(DegradedMode to, const std::string& reason) {
  if (!mode_leq_safety(mode_, to)) return false; // relaxing needs an operator override
  if (to == mode_) return true;
  if (log_) {
    log_->append("assurance", "DegradedModeChanged",
                 json{{"from", std::string(to_string(mode_))},
                      {"to", std::string(to_string(to))},
                      {"reason", reason}});
  }
  mode_ = to;
  return true;
}

void Supervisor::operator_override(DegradedMode to, const std::string& operator_id) {
  if (log_) {
    log_->append("assurance", "OperatorOverride",
                 json{{"from", std::string(to_string(mode_))},
                      {"to", std::string(to_string(to))},
                      {"operator", operator_id}});
  }
  mode_ = to;
}

// ---------------------------------------------------------------------------
// Intention gates

namespace {

bool goal_is_normalized(const json& goal) {
  if (!goal.is_object() || !goal.contains("objective") || !goal.contains("constraints")) {
    return false;
  }
  const json& objective = goal.at("objective");
  return objective.is_object() && objective.contains("metric") && objective.contains("target") &&
         goal.at("constraints").is_array();
}

} // namespace

std::variant<Intention, GoalRejected> adoption_filter(const json& goal,
                                                      const std::vector<Verifier>& feasibility,
                                                      IdSequence& intention_ids,
                                                      IdSequence& verdict_ids, VerdictStore* store,
                                                      audit::AuditLog* log) {
  if (!goal_is_normalized(goal)) {
    GoalRejected rejected{"MalformedGoal", {"goal_not_normalized"}};
    if (log) {
      log->append("assurance", "GoalRejected",
                  json{{"reason", rejected.reason}, {"goal", goal}});
    }
    return rejected;
  }
  const std::string goal_ref = "goal-" + canonical_hash(goal).substr(0, 12);
  const Verdict verdict = verify(goal_ref, goal, feasibility, verdict_ids, store, log);
  if (!verdict.pass) {
    GoalRejected rejected{"FeasibilityFailed", verdict.reason_codes};
    if (log) {
      log->append("assurance", "GoalRejected",
                  json{{"reason", rejected.reason}, {"goal", goal},
                       {"verdict", verdict.verdict_id}});
    }
    return rejected;
  }
  Intention intention;
  intention.intention_id = intention_ids.make();
  intention.goal = goal;
  if (log) {
    log->append("assurance", "GoalAdopted",
                json{{"intention_id", intention.intention_id}, {"goal", goal},
                     {"verdict", verdict.verdict_id}});
  }
  return intention;
}

std::string_view to_string(TriggerKind kind) {
  switch (kind) {
  case TriggerKind::PreconditionViolated: return "precondition_violated";
  case TriggerKind::NewEvidence: return "new_evidence";
  case TriggerKind::RiskChange: return "risk_change";
  }
  return "precondition_violated";
}

TriggerKind trigger_kind_from_string(std::string_view text) {
  if (text == "precondition_violated") return TriggerKind::PreconditionViolated;
  if (text == "new_evidence") return TriggerKind::NewEvidence;
  if (text == "risk_change") return TriggerKind::RiskChange;
  throw std::invalid_argument("unknown trigger kind: " + std::string(text));
}

std::optional<ReconsiderTrigger> execution_monitor(const Intention& intention,
                                                   const json& observations,
                                                   const std::vector<MonitorRule>& rules,
                                                   audit::AuditLog* log) {
  for (const auto& rule : rules) {
    if (eval_predicate(rule.predicate, observations)) {
      ReconsiderTrigger trigger{rule.kind,
                                rule.predicate.path + " " +
                                    std::string(to_string(rule.predicate.op)) + " " +
                                    canonical_dump(rule.predicate.literal)};
      if (log) {
        log->append("assurance", "ReconsiderTriggered",
                    json{{"intention_id", intention.intention_id},
                         {"kind", std::string(to_string(trigger.kind))},
                         {"detail", trigger.detail}});
      }
      return trigger;
    }
  }
  return std::nullopt;
}

std::string_view to_string(ReconsiderAction action) {
  switch (action) {
  case ReconsiderAction::Keep: return "keep";
  case ReconsiderAction::Suspend: return "suspend";
  case ReconsiderAction::Drop: return "drop";
  }
  return "keep";
}

ReconsiderAction reconsider(Intention& intention, const ReconsiderTrigger& trigger,
                            const ReconsiderPolicy& policy, audit::AuditLog* log) {
  ReconsiderAction action = ReconsiderAction::Keep;
  const auto it = policy.table.find(trigger.kind);
  if (it != policy.table.end()) action = it->second;
  switch (action) {
  case ReconsiderAction::Keep: break;
  case ReconsiderAction::Suspend: intention.state = Intention::State::Suspended; break;
  case ReconsiderAction::Drop: intention.state = Intention::State::Dropped; break;
  }
  if (log) {
    log->append("assurance", "IntentionReconsidered",
                json{{"intention_id", intention.intention_id},
                     {"trigger", std::string(to_string(trigger.kind))},
                     {"action", std::string(to_string(action))}});
  }
  return action;
}

} // namespace agentkernel::assurance
