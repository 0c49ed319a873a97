#pragma once

#include "agentkernel/assurance.hpp"
#include "agentkernel/audit.hpp"
#include "agentkernel/contracts.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace agentkernel::protocol {

enum class SpeechAct { Proposal, Critique, Evidence, Decision, Info };
std::string_view to_string(SpeechAct act);
SpeechAct speech_act_from_string(std::string_view text);

/// Immutable for the dialogue's lifetime; the roster fixed at start is the
/// complete authority map.
struct RoleDescriptor {
  std::string role_id;
  std::string display_name;
  std::string token_ref; // capability token bound to this role
  assurance::Budget per_role_budget;
  bool may_propose = false;
  bool may_critique = false;
  bool may_decide = false;
};

json to_document(const RoleDescriptor& role);
RoleDescriptor role_from_document(const json& doc);

struct Message {
  std::uint64_t seq = 0;   // engine-assigned, gap-free
  std::uint64_t round = 0; // engine-assigned
  std::string role_id;
  SpeechAct speech_act = SpeechAct::Info;
  json payload;
  std::vector<std::string> evidence_refs; // memory-record / verdict ids
  std::vector<std::string> tool_calls;    // tool names this message wants used
  bool decision_flag = false;
  std::string payload_hash; // engine-computed canonical hash
};

json to_document(const Message& message);
Message message_from_document(const json& doc);

/// Acceptance marker: an Info payload {"accept": "<proposal payload_hash>"}.
/// Consensus is explicit, never inferred from text similarity.
std::optional<std::string> accept_marker(const Message& message);

struct DialogueConfig {
  std::uint64_t max_rounds = 8;
  Tick max_total_ticks = 0; // 0 = unbounded
  std::uint64_t fixed_point_window = 2;
  std::uint64_t no_new_info_window = 3;
  bool citation_required = false;
  std::uint64_t violation_quarantine_threshold = 3;
};

json to_document(const DialogueConfig& config);
DialogueConfig dialogue_config_from_document(const json& doc);

enum class ViolationCode {
  UnknownRole,
  UnauthorizedSpeechAct,
  MissingEvidence,
  RoleBudgetExceeded,
  AuthorityEscalation,
};
std::string_view to_string(ViolationCode code);

struct ProtocolViolation {
  ViolationCode code = ViolationCode::UnknownRole;
  std::string role_id;
  std::string detail;
};

struct DialogueOutcome {
  std::optional<json> adopted; // decision payload
  assurance::WhyStopped why_stopped;
  std::string transcript_ref; // canonical hash over the transcript
  std::uint64_t rounds_used = 0;
  std::vector<std::string> muted_roles;
  bool low_confidence = false; // arbiter picked among unverified proposals
};

json to_document(const DialogueOutcome& outcome);

/// True iff the multiset of Proposal payload hashes in the last `window`
/// completed rounds equals the one in the `window` rounds before; transcripts
/// shorter than 2*window rounds never fix-point.
bool detect_fixed_point(const std::vector<Message>& transcript, std::uint64_t window,
                        std::uint64_t rounds_completed);

struct ScoredProposal {
  std::uint64_t seq = 0;
  double evidence_score = 0.0;
  json payload;
};

struct ArbiterRule {
  std::string version = "max-evidence/v1";
};

/// Deterministic, versioned decision rule: highest evidence score wins, ties
/// break toward the lowest seq. Unverified proposals score zero.
struct ArbiterDecision {
  ScoredProposal selected;
  bool low_confidence = false; // every candidate scored zero
  std::string rule_version;
};
std::variant<ArbiterDecision, std::string> arbitrate(const std::vector<ScoredProposal>& proposals,
                                                     const ArbiterRule& rule);

/// Fraction of a proposal's cited claims backed by passing verdicts.
double evidence_score(const Message& proposal, const assurance::VerdictStore& verdicts);

/// An agent maps the transcript prefix to its next message; nullopt passes
/// the turn. Must be deterministic given (prefix, seed).
using Agent = std::function<std::optional<Message>(const std::vector<Message>&, std::uint64_t)>;

/// Conversation-as-computation engine: fixed roster, round-robin turns,
/// hard and soft stop rules, deterministic arbitration on deadlock, per-role
/// budgets, violation quarantine. One instance per dialogue.
class DialogueEngine {
public:
  DialogueEngine(std::vector<RoleDescriptor> roster, DialogueConfig config,
                 std::string arbiter_role, audit::AuditLog* log = nullptr,
                 LogicalClock* clock = nullptr,
                 const contracts::ToolRegistry* registry = nullptr,
                 std::map<std::string, contracts::CapabilityToken> role_tokens = {},
                 const assurance::VerdictStore* verdicts = nullptr);

  /// Validates and appends. Violations never reach the transcript and count
  /// toward the sender's quarantine threshold.
  std::variant<std::uint64_t, ProtocolViolation> post(Message message);

  DialogueOutcome run(const std::map<std::string, Agent>& agents, std::uint64_t seed);

  const std::vector<Message>& transcript() const { return transcript_; }
  bool muted(const std::string& role_id) const;

  /// Nodes are messages, edges reply ("re" payload field referencing a
  /// proposal hash) and evidence dependencies.
  json export_dag() const;

private:
  std::optional<ProtocolViolation> check(const Message& message) const;
  void record_violation(const ProtocolViolation& violation);
  std::optional<json> consensus_payload() const;

  std::vector<RoleDescriptor> roster_;
  DialogueConfig config_;
  std::string arbiter_role_;
  audit::AuditLog* log_;
  LogicalClock* clock_;
  const contracts::ToolRegistry* registry_;
  std::map<std::string, contracts::CapabilityToken> role_tokens_;
  const assurance::VerdictStore* verdicts_;

  std::vector<Message> transcript_;
  std::map<std::string, assurance::BudgetLedger> ledgers_;
  std::map<std::string, std::uint64_t> violations_;
  std::vector<std::string> muted_;
  std::uint64_t round_ = 0;
  Tick ticks_used_ = 0;
};

/// Scripted agent fixture: {"turns": [message...]} plays messages in turn
/// order; {"by_prefix": {"<transcript hash>": message}} overrides by exact
/// transcript-prefix hash. A turn value of null passes.
class ScriptedAgent {
public:
  static ScriptedAgent from_document(const json& doc);
  static ScriptedAgent from_file(const std::string& path);

  Agent fn(const std::string& role_id) const;

private:
  std::vector<json> turns_;
  std::map<std::string, json> by_prefix_;
};

/// Canonical hash over a transcript prefix, the key for scripted overrides.
std::string transcript_prefix_hash(const std::vector<Message>& transcript);

} // namespace agentkernel::protocol
