#pragma once

#include "agentkernel/audit.hpp"
#include "agentkernel/canonical.hpp"
#include "agentkernel/clock.hpp"
#include "agentkernel/contracts.hpp"
#include "agentkernel/document_path.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace agentkernel::assurance {

/// Termination vocabulary. Search and dialogue keep their own codes rather
/// than sharing near-synonyms, so traces name the subsystem that stopped.
enum class WhyStoppedCode {
  GoalSatisfied,
  ConsensusReached,
  BudgetExceeded,
  NonConvergence,
  BudgetExhausted,
  Convergence,
  Contradiction,
  SafetyHalt,
  VerifierRejection,
  Deadlock,
  OperatorAbort,
};

std::string_view to_string(WhyStoppedCode code);
WhyStoppedCode why_stopped_from_string(std::string_view text);

struct WhyStopped {
  WhyStoppedCode code = WhyStoppedCode::GoalSatisfied;
  std::string detail;
};

json to_document(const WhyStopped& why);

// ---------------------------------------------------------------------------
// Verdicts

struct Verdict {
  std::string verdict_id;
  std::string verifier_id;
  std::string verifier_version;
  std::string subject_ref; // plan, call, record or message id
  bool pass = false;
  std::vector<std::string> reason_codes;
  std::vector<std::string> evidence_refs;
};

json to_document(const Verdict& verdict);
Verdict verdict_from_document(const json& doc);

/// Deterministic check over a subject document. Returning pass=false must
/// come with at least one reason code.
struct Verifier {
  std::string id;
  std::string version;
  std::function<std::pair<bool, std::vector<std::string>>(const json& subject)> check;
};

/// Immutable verdict index for the episode; the gateway's simulation gate and
/// the protocol's evidence scoring read from it.
class VerdictStore {
public:
  const Verdict& put(Verdict verdict);
  const Verdict* find(const std::string& verdict_id) const;

private:
  std::map<std::string, Verdict> verdicts_;
};

/// Runs verifiers in order and aggregates fail-closed: any verifier crash or
/// missing result fails the aggregate with reason "verifier_error". An empty
/// verifier list passes vacuously, flagged "no_verifiers". Each constituent
/// verdict and the aggregate are stored and audit-logged when sinks are given.
Verdict verify(const std::string& subject_ref, const json& subject,
               const std::vector<Verifier>& verifiers, IdSequence& verdict_ids,
               VerdictStore* store = nullptr, audit::AuditLog* log = nullptr);

// ---------------------------------------------------------------------------
// Budgets

struct Budget {
  std::uint64_t max_steps = 0;
  std::uint64_t max_cost_units = 0;
  Tick max_wall_ticks = 0;
  std::map<std::string, std::uint64_t> per_tool_quotas;
};

struct BudgetLedger {
  std::uint64_t steps = 0;
  std::uint64_t cost_units = 0;
  Tick wall_ticks = 0;
  std::map<std::string, std::uint64_t> per_tool;

  BudgetLedger& operator+=(const BudgetLedger& other);
};

json to_document(const Budget& budget);
Budget budget_from_document(const json& doc);
json to_document(const BudgetLedger& ledger);

/// Continue (nullopt) iff every dimension of ledger+increment stays within
/// budget. A halt names the first violated dimension, checked in the fixed
/// order: steps, cost_units, wall_ticks, then per-tool quotas by tool name.
std::optional<WhyStopped> check_budget(const BudgetLedger& ledger, const Budget& budget,
                                       const BudgetLedger& increment);

// ---------------------------------------------------------------------------
// Supervisor

enum class DegradedMode { Normal, MonitorOnly, ReadOnly, Shadow };
std::string_view to_string(DegradedMode mode);
DegradedMode degraded_mode_from_string(std::string_view text);

/// True when `to` is at least as restrictive as `from` (Normal < MonitorOnly
/// < ReadOnly < Shadow).
bool mode_leq_safety(DegradedMode from, DegradedMode to);

struct SupervisorPolicy {
  double risk_threshold = 1.0;
  std::vector<DegradedMode> degraded_modes{DegradedMode::MonitorOnly, DegradedMode::ReadOnly,
                                           DegradedMode::Shadow};
  std::string escalation_target = "operator";
  std::vector<Predicate> reconsideration_triggers;
};

json to_document(const SupervisorPolicy& policy);
SupervisorPolicy supervisor_policy_from_document(const json& doc);

struct Authorized {};

struct SafeHalt {
  std::string explanation; // names the violated condition
  std::string escalation_target;
};

using SuperviseResult = std::variant<Authorized, SafeHalt>;

/// The safety boundary in front of the gateway. Holds the degraded-mode state
/// machine; a SafeHalt result must mean the gateway never sees the call.
class Supervisor {
public:
  Supervisor(SupervisorPolicy policy, audit::AuditLog* log = nullptr);

  /// Authorize iff risk <= threshold, the verdict passes, and the current
  /// mode still allows the call's scope. SafeHalt logs SafeHalt + Escalation.
  SuperviseResult supervise_action(const contracts::ToolCall& call, contracts::ToolScope scope,
                                   double risk, const Verdict& verdict);

  /// The pure decision half of supervise_action, for kernels that must
  /// finish undo work (saga compensation) before the halt event is sealed:
  /// a SafeHalt audit event is always the last word before escalation.
  SuperviseResult decide_action(const contracts::ToolCall& call, contracts::ToolScope scope,
                                double risk, const Verdict& verdict) const;

  DegradedMode mode() const { return mode_; }

  /// Direct safe-halt path for failures detected outside supervise_action
  /// (tool breakdown, failed plan validation). Logs SafeHalt + Escalation.
  SafeHalt safe_halt(const std::string& subject_ref, const std::string& explanation);

  /// Transitions only toward safer modes; anything else needs
  /// operator_override. Returns false when the request would relax the mode.
  bool degrade(DegradedMode to, const std::string& reason);
  void operator_override(DegradedMode to, const std::string& operator_id);

  const SupervisorPolicy& policy() const { return policy_; }

private:
  SupervisorPolicy policy_;
  audit::AuditLog* log_;
  DegradedMode mode_ = DegradedMode::Normal;
};

// ---------------------------------------------------------------------------
// Intention gates (adoption, monitoring, reconsideration)

/// Normalized goal: {"objective": {"metric": text, "target": value},
/// "constraints": [...]}. Anything else is MalformedGoal.
struct Intention {
  std::string intention_id;
  json goal;
  enum class State { Active, Suspended, Dropped } state = State::Active;
};

struct GoalRejected {
  std::string reason; // "MalformedGoal" or the failing feasibility reasons
  std::vector<std::string> reason_codes;
};

std::variant<Intention, GoalRejected> adoption_filter(const json& goal,
                                                      const std::vector<Verifier>& feasibility,
                                                      IdSequence& intention_ids,
                                                      IdSequence& verdict_ids,
                                                      VerdictStore* store = nullptr,
                                                      audit::AuditLog* log = nullptr);

enum class TriggerKind { PreconditionViolated, NewEvidence, RiskChange };
std::string_view to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(std::string_view text);

struct ReconsiderTrigger {
  TriggerKind kind = TriggerKind::PreconditionViolated;
  std::string detail;
};

/// Predicates paired with the trigger they raise when true on observations.
struct MonitorRule {
  TriggerKind kind = TriggerKind::PreconditionViolated;
  Predicate predicate;
};

/// Hold (nullopt) while no rule fires; otherwise the first firing rule in
/// list order.
std::optional<ReconsiderTrigger> execution_monitor(const Intention& intention,
                                                   const json& observations,
                                                   const std::vector<MonitorRule>& rules,
                                                   audit::AuditLog* log = nullptr);

enum class ReconsiderAction { Keep, Suspend, Drop };
std::string_view to_string(ReconsiderAction action);

struct ReconsiderPolicy {
  std::map<TriggerKind, ReconsiderAction> table; // static trigger -> action map
};

ReconsiderAction reconsider(Intention& intention, const ReconsiderTrigger& trigger,
                            const ReconsiderPolicy& policy, audit::AuditLog* log = nullptr);

} // namespace agentkernel::assurance
