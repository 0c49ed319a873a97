#include "agentkernel/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace agentkernel::protocol {

std::string_view to_string(SpeechAct act) {
  switch (act) {
  case SpeechAct::Proposal: return "proposal";
  case SpeechAct::Critique: return "critique";
  case SpeechAct::Evidence: return "evidence";
  case SpeechAct::Decision: return "decision";
  case SpeechAct::Info: return "info";
  }
  return "info";
}

SpeechAct speech_act_from_string(std::string_view text) {
  if (text == "proposal") return SpeechAct::Proposal;
  if (text == "critique") return SpeechAct::Critique;
  if (text == "evidence") return SpeechAct::Evidence;
  if (text == "decision") return SpeechAct::Decision;
  if (text == "info") return SpeechAct::Info;
  throw std::invalid_argument("unknown speech act: " + std::string(text));
}

std::string_view to_string(ViolationCode code) {
  switch (code) {
  case ViolationCode::UnknownRole: return "UnknownRole";
  case ViolationCode::UnauthorizedSpeechAct: return "UnauthorizedSpeechAct";
  case ViolationCode::MissingEvidence: return "MissingEvidence";
  case ViolationCode::RoleBudgetExceeded: return "RoleBudgetExceeded";
  case ViolationCode::AuthorityEscalation: return "AuthorityEscalation";
  }
  return "UnknownRole";
}

json to_document(const RoleDescriptor& role) {
  return json{{"role_id", role.role_id},
              {"display_name", role.display_name},
              {"token_ref", role.token_ref},
              {"per_role_budget", assurance::to_document(role.per_role_budget)},
              {"may_propose", role.may_propose},
              {"may_critique", role.may_critique},
              {"may_decide", role.may_decide}};
}

RoleDescriptor role_from_document(const json& doc) {
  RoleDescriptor role;
  role.role_id = doc.at("role_id").get<std::string>();
  role.display_name = doc.value("display_name", role.role_id);
  role.token_ref = doc.value("token_ref", std::string{});
  if (doc.contains("per_role_budget")) {
    role.per_role_budget = assurance::budget_from_document(doc.at("per_role_budget"));
  }
  role.may_propose = doc.value("may_propose", false);
  role.may_critique = doc.value("may_critique", false);
  role.may_decide = doc.value("may_decide", false);
  return role;
}

json to_document(const Message& message) {
  return json{{"seq", message.seq},
              {"round", message.round},
              {"role_id", message.role_id},
              {"speech_act", std::string(to_string(message.speech_act))},
              {"payload", message.payload},
              {"evidence_refs", message.evidence_refs},
              {"tool_calls", message.tool_calls},
              {"decision_flag", message.decision_flag},
              {"payload_hash", message.payload_hash}};
}

Message message_from_document(const json& doc) {
  Message message;
  message.seq = doc.value("seq", std::uint64_t{0});
  message.round = doc.value("round", std::uint64_t{0});
  message.role_id = doc.value("role_id", std::string{});
  message.speech_act = speech_act_from_string(doc.value("speech_act", std::string{"info"}));
  message.payload = doc.value("payload", json::object());
  message.evidence_refs = doc.value("evidence_refs", std::vector<std::string>{});
  message.tool_calls = doc.value("tool_calls", std::vector<std::string>{});
  message.decision_flag = doc.value("decision_flag", false);
  message.payload_hash = doc.value("payload_hash", std::string{});
  return message;
}

std::optional<std::string> accept_marker(const Message& message) {
  if (message.speech_act != SpeechAct::Info) return std::nullopt;
  if (!message.payload.is_object() || !message.payload.contains("accept")) return std::nullopt;
  const json& target = message.payload.at("accept");
  if (!target.is_string()) return std::nullopt;
  return target.get<std::string>();
}

json to_document(const DialogueConfig& config) {
  return json{{"max_rounds", config.max_rounds},
              {"max_total_ticks", config.max_total_ticks},
              {"fixed_point_window", config.fixed_point_window},
              {"no_new_info_window", config.no_new_info_window},
              {"citation_required", config.citation_required},
              {"violation_quarantine_threshold", config.violation_quarantine_threshold}};
}

DialogueConfig dialogue_config_from_document(const json& doc) {
  DialogueConfig config;
  config.max_rounds = doc.value("max_rounds", std::uint64_t{8});
  config.max_total_ticks = doc.value("max_total_ticks", Tick{0});
  config.fixed_point_window = doc.value("fixed_point_window", std::uint64_t{2});
  config.no_new_info_window = doc.value("no_new_info_window", std::uint64_t{3});
  config.citation_required = doc.value("citation_required", false);
  config.violation_quarantine_threshold =
      doc.value("violation_quarantine_threshold", std::uint64_t{3});
  return config;
}

json to_document(const DialogueOutcome& outcome) {
  json doc{{"why_stopped", assurance::to_document(outcome.why_stopped)},
           {"transcript_ref", outcome.transcript_ref},
           {"rounds_used", outcome.rounds_used},
           {"muted_roles", outcome.muted_roles},
           {"low_confidence", outcome.low_confidence}};
  if (outcome.adopted) doc["adopted"] = *outcome.adopted;
  return doc;
}

// ---------------------------------------------------------------------------
// Stop rules

bool detect_fixed_point(const std::vector<Message>& transcript, std::uint64_t window,
                        std::uint64_t rounds_completed) {
  if (window == 0 || rounds_completed < 2 * window) return false;
  std::multiset<std::string> recent;
  std::multiset<std::string> previous;
  const std::uint64_t recent_floor = rounds_completed - window;      // exclusive
  const std::uint64_t previous_floor = rounds_completed - 2 * window; // exclusive
  for (const auto& message : transcript) {
    if (message.speech_act != SpeechAct::Proposal) continue;
    if (message.round > recent_floor) {
      recent.insert(message.payload_hash);
    } else if (message.round > previous_floor) {
      previous.insert(message.payload_hash);
    }
  }
  return recent == previous;
}

double evidence_score(const Message& proposal, const assurance::VerdictStore& verdicts) {
  // Claims live in payload.claims as [{"text":..., "verdict_ref":...}]; a
  // proposal without explicit claims is scored over its evidence_refs.
  std::vector<std::string> refs;
  if (proposal.payload.is_object() && proposal.payload.contains("claims") &&
      proposal.payload.at("claims").is_array()) {
    for (const auto& claim : proposal.payload.at("claims")) {
      refs.push_back(claim.is_object() && claim.contains("verdict_ref")
                         ? claim.at("verdict_ref").get<std::string>()
                         : std::string{});
    }
  } else {
    refs = proposal.evidence_refs;
  }
  if (refs.empty()) return 0.0;
  std::size_t passing = 0;
  for (const auto& ref : refs) {
    const assurance::Verdict* verdict = ref.empty() ? nullptr : verdicts.find(ref);
    if (verdict != nullptr && verdict->pass) ++passing;
  }
  return static_cast<double>(passing) / static_cast<double>(refs.size());
}

std::variant<ArbiterDecision, std::string> arbitrate(const std::vector<ScoredProposal>& proposals,
                                                     const ArbiterRule& rule) {
  if (proposals.empty()) return std::string("NoProposals");
  const ScoredProposal* best = &proposals.front();
  bool any_positive = false;
  for (const auto& candidate : proposals) {
    if (candidate.evidence_score > 0.0) any_positive = true;
    if (candidate.evidence_score > best->evidence_score ||
        (candidate.evidence_score == best->evidence_score && candidate.seq < best->seq)) {
      best = &candidate;
    }
  }
  return ArbiterDecision{*best, !any_positive, rule.version};
}

// ---------------------------------------------------------------------------
// Engine

DialogueEngine::DialogueEngine(std::vector<RoleDescriptor> roster, DialogueConfig config,
                               std::string arbiter_role, audit::AuditLog* log,
                               LogicalClock* clock, const contracts::ToolRegistry* registry,
                               std::map<std::string, contracts::CapabilityToken> role_tokens,
                               const assurance::VerdictStore* verdicts)
    : roster_(std::move(roster)), config_(std::move(config)),
      arbiter_role_(std::move(arbiter_role)), log_(log), clock_(clock), registry_(registry),
      role_tokens_(std::move(role_tokens)), verdicts_(verdicts) {}

bool DialogueEngine::muted(const std::string& role_id) const {
  return std::find(muted_.begin(), muted_.end(), role_id) != muted_.end();
}

namespace {

bool budget_unlimited(const assurance::Budget& budget) {
  return budget.max_steps == 0 && budget.max_cost_units == 0 && budget.max_wall_ticks == 0 &&
         budget.per_tool_quotas.empty();
}

} // namespace

std::optional<ProtocolViolation> DialogueEngine::check(const Message& message) const {
  const auto role_it = std::find_if(roster_.begin(), roster_.end(), [&](const RoleDescriptor& r) {
    return r.role_id == message.role_id;
  });
  if (role_it == roster_.end()) {
    return ProtocolViolation{ViolationCode::UnknownRole, message.role_id,
                             "role not in the initial roster"};
  }
  if (muted(message.role_id)) {
    return ProtocolViolation{ViolationCode::UnauthorizedSpeechAct, message.role_id,
                             "role is quarantined"};
  }
  const RoleDescriptor& role = *role_it;
  const bool allowed = [&] {
    switch (message.speech_act) {
    case SpeechAct::Proposal: return role.may_propose;
    case SpeechAct::Critique: return role.may_critique;
    case SpeechAct::Decision: return role.may_decide;
    case SpeechAct::Evidence:
    case SpeechAct::Info: return true;
    }
    return false;
  }();
  if (!allowed) {
    return ProtocolViolation{ViolationCode::UnauthorizedSpeechAct, message.role_id,
                             std::string(to_string(message.speech_act)) +
                                 " not granted to this role"};
  }
  if (config_.citation_required && message.evidence_refs.empty() &&
      (message.speech_act == SpeechAct::Proposal || message.speech_act == SpeechAct::Critique)) {
    return ProtocolViolation{ViolationCode::MissingEvidence, message.role_id,
                             "citations required for proposals and critiques"};
  }
  if (!budget_unlimited(role.per_role_budget)) {
    const auto ledger_it = ledgers_.find(message.role_id);
    const assurance::BudgetLedger ledger =
        ledger_it == ledgers_.end() ? assurance::BudgetLedger{} : ledger_it->second;
    assurance::BudgetLedger increment;
    increment.steps = 1;
    if (assurance::check_budget(ledger, role.per_role_budget, increment)) {
      return ProtocolViolation{ViolationCode::RoleBudgetExceeded, message.role_id,
                               "per-role step budget exhausted"};
    }
  }
  if (registry_ != nullptr) {
    const auto token_it = role_tokens_.find(message.role_id);
    for (const auto& tool : message.tool_calls) {
      const contracts::ToolSpec* spec = registry_->find_any(tool);
      if (spec == nullptr) {
        return ProtocolViolation{ViolationCode::AuthorityEscalation, message.role_id,
                                 "unknown tool " + tool};
      }
      if (token_it == role_tokens_.end() ||
          !contracts::allowlist_matches(token_it->second.tool_allowlist, tool) ||
          !contracts::scope_leq(spec->scope, token_it->second.scope_ceiling)) {
        return ProtocolViolation{ViolationCode::AuthorityEscalation, message.role_id,
                                 "tool " + tool + " beyond this role's capability"};
      }
    }
  }
  return std::nullopt;
}

void DialogueEngine::record_violation(const ProtocolViolation& violation) {
  violations_[violation.role_id] += 1;
  if (log_) {
    log_->append("protocol", "ProtocolViolation",
                 json{{"role_id", violation.role_id},
                      {"code", std::string(to_string(violation.code))},
                      {"detail", violation.detail},
                      {"count", violations_[violation.role_id]}});
  }
  if (violations_[violation.role_id] >= config_.violation_quarantine_threshold &&
      !muted(violation.role_id)) {
    muted_.push_back(violation.role_id);
    if (log_) {
      log_->append("protocol", "RoleMuted",
                   json{{"role_id", violation.role_id},
                        {"violations", violations_[violation.role_id]}});
    }
  }
}

std::variant<std::uint64_t, ProtocolViolation> DialogueEngine::post(Message message) {
  if (auto violation = check(message)) {
    record_violation(*violation);
    return *violation;
  }
  message.seq = transcript_.size();
  message.round = round_;
  message.payload_hash = canonical_hash(message.payload);
  ledgers_[message.role_id].steps += 1;
  if (clock_) clock_->advance(1);
  ticks_used_ += 1;
  if (log_) {
    log_->append("protocol", "MessagePosted", to_document(message));
  }
  transcript_.push_back(std::move(message));
  return transcript_.back().seq;
}

std::optional<json> DialogueEngine::consensus_payload() const {
  // A role's stance is its latest accept marker, or its own latest proposal.
  std::string agreed;
  for (const auto& role : roster_) {
    if (role.role_id == arbiter_role_ || muted(role.role_id)) continue;
    std::string stance;
    for (auto it = transcript_.rbegin(); it != transcript_.rend(); ++it) {
      if (it->role_id != role.role_id) continue;
      if (auto marker = accept_marker(*it)) {
        stance = *marker;
        break;
      }
      if (it->speech_act == SpeechAct::Proposal) {
        stance = it->payload_hash;
        break;
      }
    }
    if (stance.empty()) return std::nullopt;
    if (agreed.empty()) {
      agreed = stance;
    } else if (agreed != stance) {
      return std::nullopt;
    }
  }
  if (agreed.empty()) return std::nullopt;
  for (const auto& message : transcript_) {
    if (message.speech_act == SpeechAct::Proposal && message.payload_hash == agreed) {
      return std::make_optional<json>(message.payload);
    }
  }
  return std::nullopt; // accepted hash must name a real proposal
}

DialogueOutcome DialogueEngine::run(const std::map<std::string, Agent>& agents,
                                    std::uint64_t seed) {
  if (log_) {
    json roster = json::array();
    for (const auto& role : roster_) roster.push_back(to_document(role));
    log_->append("protocol", "DialogueStarted",
                 json{{"roster", std::move(roster)}, {"config", to_document(config_)},
                      {"arbiter", arbiter_role_}});
  }
  DialogueOutcome outcome;
  outcome.why_stopped = {assurance::WhyStoppedCode::BudgetExceeded, "rounds"};

  for (round_ = 1; round_ <= config_.max_rounds; ++round_) {
    bool any_posted = false;
    for (const auto& role : roster_) {
      if (muted(role.role_id)) continue;
      const auto agent_it = agents.find(role.role_id);
      if (agent_it == agents.end()) continue;
      auto message = agent_it->second(transcript_, seed);
      if (!message) continue; // pass
      message->role_id = role.role_id;
      if (std::holds_alternative<std::uint64_t>(post(std::move(*message)))) {
        any_posted = true;
      }
    }
    outcome.rounds_used = round_;

    if (auto adopted = consensus_payload()) {
      outcome.adopted = std::move(adopted);
      outcome.why_stopped = {assurance::WhyStoppedCode::ConsensusReached, ""};
      break;
    }
    if (!any_posted) {
      // Deadlock: every role passed a full round. The arbiter pre-empts with
      // its deterministic rule over all proposals so far.
      std::vector<ScoredProposal> proposals;
      for (const auto& message : transcript_) {
        if (message.speech_act != SpeechAct::Proposal) continue;
        const double score = verdicts_ ? evidence_score(message, *verdicts_) : 0.0;
        proposals.push_back({message.seq, score, message.payload});
      }
      const auto decision = arbitrate(proposals, ArbiterRule{});
      if (const auto* picked = std::get_if<ArbiterDecision>(&decision)) {
        outcome.adopted = picked->selected.payload;
        outcome.low_confidence = picked->low_confidence;
        Message verdict_msg;
        verdict_msg.role_id = arbiter_role_;
        verdict_msg.speech_act = SpeechAct::Decision;
        verdict_msg.decision_flag = true;
        verdict_msg.payload = json{{"selected_seq", picked->selected.seq},
                                   {"rule_version", picked->rule_version},
                                   {"payload", picked->selected.payload}};
        post(std::move(verdict_msg));
        if (log_) {
          log_->append("protocol", "ArbiterDecision",
                       json{{"selected_seq", picked->selected.seq},
                            {"rule_version", picked->rule_version},
                            {"low_confidence", picked->low_confidence}});
        }
      }
      outcome.why_stopped = {assurance::WhyStoppedCode::Deadlock, "all roles passed a full round"};
      break;
    }
    if (detect_fixed_point(transcript_, config_.fixed_point_window, round_)) {
      outcome.why_stopped = {assurance::WhyStoppedCode::NonConvergence, "fixed_point"};
      break;
    }
    if (round_ > config_.no_new_info_window) {
      std::set<std::string> older;
      bool fresh = false;
      const std::uint64_t floor = round_ - config_.no_new_info_window; // exclusive
      for (const auto& message : transcript_) {
        if (message.round <= floor) older.insert(message.payload_hash);
      }
      for (const auto& message : transcript_) {
        if (message.round > floor && !older.contains(message.payload_hash)) {
          fresh = true;
          break;
        }
      }
      if (!fresh) {
        outcome.why_stopped = {assurance::WhyStoppedCode::NonConvergence, "no_new_information"};
        break;
      }
    }
    if (config_.max_total_ticks > 0 && ticks_used_ >= config_.max_total_ticks) {
      outcome.why_stopped = {assurance::WhyStoppedCode::BudgetExceeded, "ticks"};
      break;
    }
    if (round_ == config_.max_rounds) {
      outcome.why_stopped = {assurance::WhyStoppedCode::BudgetExceeded, "rounds"};
      break;
    }
  }

  json transcript_docs = json::array();
  for (const auto& message : transcript_) transcript_docs.push_back(to_document(message));
  outcome.transcript_ref = canonical_hash(transcript_docs);
  outcome.muted_roles = muted_;
  if (outcome.why_stopped.code != assurance::WhyStoppedCode::ConsensusReached &&
      outcome.why_stopped.code != assurance::WhyStoppedCode::Deadlock) {
    outcome.adopted.reset(); // adopted only with consensus or an arbiter decision
  }
  if (log_) {
    log_->append("protocol", "DialogueStopped", to_document(outcome));
  }
  return outcome;
}

json DialogueEngine::export_dag() const {
  json nodes = json::array();
  json edges = json::array();
  std::map<std::string, std::uint64_t> proposal_by_hash;
  for (const auto& message : transcript_) {
    if (message.speech_act == SpeechAct::Proposal) {
      proposal_by_hash.emplace(message.payload_hash, message.seq);
    }
  }
  std::set<std::string> artifacts;
  for (const auto& message : transcript_) {
    nodes.push_back(json{{"id", message.seq},
                         {"role_id", message.role_id},
                         {"speech_act", std::string(to_string(message.speech_act))},
                         {"payload_hash", message.payload_hash}});
    if (message.payload.is_object() && message.payload.contains("re") &&
        message.payload.at("re").is_string()) {
      const auto it = proposal_by_hash.find(message.payload.at("re").get<std::string>());
      if (it != proposal_by_hash.end()) {
        edges.push_back(json{{"from", message.seq}, {"to", it->second}, {"kind", "reply"}});
      }
    }
    for (const auto& ref : message.evidence_refs) {
      artifacts.insert(ref);
      edges.push_back(json{{"from", message.seq}, {"to", "artifact:" + ref}, {"kind", "evidence"}});
    }
  }
  for (const auto& ref : artifacts) {
    nodes.push_back(json{{"id", "artifact:" + ref}, {"kind", "artifact"}});
  }
  return json{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

// ---------------------------------------------------------------------------
// Scripted agents

ScriptedAgent ScriptedAgent::from_document(const json& doc) {
  ScriptedAgent agent;
  if (doc.contains("turns")) {
    for (const auto& turn : doc.at("turns")) agent.turns_.push_back(turn);
  }
  if (doc.contains("by_prefix")) {
    for (auto it = doc.at("by_prefix").begin(); it != doc.at("by_prefix").end(); ++it) {
      agent.by_prefix_[it.key()] = it.value();
    }
  }
  return agent;
}

ScriptedAgent ScriptedAgent::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open agent script: " + path);
  return from_document(json::parse(in));
}

std::string transcript_prefix_hash(const std::vector<Message>& transcript) {
  json docs = json::array();
  for (const auto& message : transcript) docs.push_back(to_document(message));
  return canonical_hash(docs);
}

Agent ScriptedAgent::fn(const std::string& role_id) const {
  const auto turns = turns_;
  const auto by_prefix = by_prefix_;
  return [turns, by_prefix, role_id](const std::vector<Message>& transcript,
                                     std::uint64_t) -> std::optional<Message> {
    const auto prefix_it = by_prefix.find(transcript_prefix_hash(transcript));
    if (prefix_it != by_prefix.end()) {
      if (prefix_it->second.is_null()) return std::nullopt;
      return message_from_document(prefix_it->second);
    }
    std::size_t own = 0;
    for (const auto& message : transcript) {
      if (message.role_id == role_id) ++own;
    }
    if (own >= turns.size()) return std::nullopt;
    const json& turn = turns[own];
    if (turn.is_null()) return std::nullopt;
    return message_from_document(turn);
  };
}

} // namespace agentkernel::protocol
