#pragma once

#include "agentkernel/assurance.hpp"
#include "agentkernel/audit.hpp"
#include "agentkernel/contracts.hpp"
#include "agentkernel/document_path.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace agentkernel::planner {

/// A slot in a plan step's arguments referring to an earlier step's output.
/// Encoded in argument documents as a string "#<step_id>.<output_path>";
/// a literal leading '#' is written "##".
struct Placeholder {
  std::string source_step;
  std::string output_path;
};

std::optional<Placeholder> parse_placeholder(const json& value);
json encode_placeholder(const Placeholder& p);

struct PlanStep {
  std::string step_id;
  std::string description;
  contracts::ToolCall call_template;
  std::vector<Predicate> preconditions;  // guards evaluated over resolved outputs
  std::vector<Predicate> postconditions; // checked against the step result
  std::optional<contracts::ToolCall> compensation_template;
  std::uint64_t cost_estimate = 0;
};

struct Plan {
  std::string plan_id;
  std::string goal_ref;
  std::vector<PlanStep> steps; // dependency order == execution order
  std::uint64_t total_cost_estimate = 0;

  /// Builds with total_cost_estimate = sum of step costs, keeping the type's
  /// invariant by construction.
  static Plan make(std::string plan_id, std::string goal_ref, std::vector<PlanStep> steps);
};

json to_document(const Plan& plan);
Plan plan_from_document(const json& doc);

/// All placeholder paths found in a step's argument document.
std::map<std::string, Placeholder> step_placeholders(const PlanStep& step);

enum class PlanErrorCode {
  CyclicPlan,
  DanglingPlaceholder,
  UnknownTool,
  StepInvalidArgs,
  StepUnauthorized,
  MissingCompensation,
  CostExceedsBudget,
};
std::string_view to_string(PlanErrorCode code);

struct PlanError {
  PlanErrorCode code = PlanErrorCode::UnknownTool;
  std::string step_id; // empty for plan-level errors
  std::string detail;
  std::vector<contracts::ValidationError> validation;
};

json to_document(const std::vector<PlanError>& errors);

/// Static plan check before anything side-effectful: placeholder graph is
/// acyclic and references only earlier steps, args validate with placeholder
/// paths opaque, every step authorizes under the token (dry run, nothing
/// consumed), actuating steps carry compensations, and the summed cost fits
/// the budget. Errors are exhaustive, ordered by step then plan-level.
std::vector<PlanError> validate_plan(const Plan& plan, const contracts::ToolRegistry& registry,
                                     const contracts::CapabilityToken& token,
                                     const assurance::Budget& budget, Tick now);

enum class BindErrorCode { MissingOutput, PathNotFound };

struct BindError {
  BindErrorCode code = BindErrorCode::MissingOutput;
  std::string step_id; // the referenced source step
  std::string path;
};

/// Pure substitution of placeholder slots from resolved step outputs; no
/// transformation of values.
std::variant<contracts::ToolCall, BindError>
bind_step(const PlanStep& step, const std::map<std::string, json>& resolved_outputs);

// ---------------------------------------------------------------------------
// Governed interleaved loop

enum class EntryKind { Thought, Action, Observation };
std::string_view to_string(EntryKind kind);

struct TranscriptEntry {
  EntryKind kind = EntryKind::Thought;
  json payload;
};

struct ReactState {
  std::vector<TranscriptEntry> transcript;
  std::uint64_t steps_taken = 0;
};

struct Thought {
  std::string text;
};

using Proposal = std::variant<Thought, contracts::ToolCall>;
/// Deterministic given (state, seed).
using Proposer = std::function<Proposal(const ReactState&, std::uint64_t seed)>;

struct GovernorApproval {
  json observation; // dispatched result
};
struct GovernorRefusal {
  std::string reason;
  json detail;
};
/// The governor stands between proposals and the world: it validates,
/// authorizes, risk-gates and dispatches, or refuses with a structured
/// reason. Refusals are recorded as observations of the governor.
using Governor = std::function<std::variant<GovernorApproval, GovernorRefusal>(
    const contracts::ToolCall&)>;

struct ReactConfig {
  std::uint64_t max_steps = 8;
  std::uint64_t reproposal_limit = 3; // refusals tolerated within one step
  std::uint64_t seed = 0;
};

/// One governed think/act step. Returns a stop code when the loop must halt
/// (step cap, refusal limit, proposer failure); otherwise appends transcript
/// entries and returns nullopt.
std::optional<assurance::WhyStopped> react_step(ReactState& state, const Proposer& proposer,
                                                const Governor& governor,
                                                const ReactConfig& config,
                                                audit::AuditLog* log = nullptr);

/// Runs react_step until it halts.
assurance::WhyStopped run_react(ReactState& state, const Proposer& proposer,
                                const Governor& governor, const ReactConfig& config,
                                audit::AuditLog* log = nullptr);

/// Diagnostic record emitted when an artifact is rejected; logged, never
/// consumed by any policy.
struct RepairHint {
  std::string failed_artifact_ref;
  std::string diagnostic;
};
json to_document(const RepairHint& hint);

// ---------------------------------------------------------------------------
// Budgeted best-first search

struct SearchNode {
  std::string node_id; // creation order: "n0", "n1", ...
  json content;
  double score = 0.0;
  std::optional<std::string> parent;
  std::uint64_t depth = 0;
  bool feasible = true;
};

struct SearchBudget {
  std::uint64_t max_expansions = 0;
  std::uint64_t max_depth = 0; // 0 = unbounded
  std::size_t beam_width = 1;
};

struct NodeScore {
  double score = 0.0;
  bool feasible = true;
};

using NodeProposer = std::function<std::vector<json>(const json& content)>;
using NodeScorer = std::function<NodeScore(const json& content)>;

struct SearchResult {
  SearchNode best;
  assurance::WhyStopped why_stopped;
  std::vector<SearchNode> explored; // every scored node, creation order
  std::uint64_t expansions = 0;
};

/// Beam search with budget governance. Stops on budget_exhausted,
/// convergence (best unchanged for `convergence_window` expansion rounds, or
/// feasible exhaustion), or contradiction (frontier emptied by infeasible
/// children). Exploration is persisted to the audit log for replay.
SearchResult search(const json& root_content, const NodeProposer& proposer,
                    const NodeScorer& scorer, const SearchBudget& budget,
                    audit::AuditLog* log = nullptr, std::uint64_t convergence_window = 3);

/// Scripted tree fixture: {"<content>": {"children": [...], "score": s,
/// "feasible": b}} keyed by the canonical dump of node content.
class ScriptedTree {
public:
  static ScriptedTree from_document(const json& doc);
  static ScriptedTree from_file(const std::string& path);

  NodeProposer proposer() const;
  NodeScorer scorer() const;

private:
  std::map<std::string, json> nodes_;
};

} // namespace agentkernel::planner
