#pragma once

#include "agentkernel/assurance.hpp"
#include "agentkernel/audit.hpp"
#include "agentkernel/clock.hpp"
#include "agentkernel/contracts.hpp"

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace agentkernel::gateway {

/// What an adapter reports back: a result document or an error code, plus the
/// logical ticks the invocation cost.
struct AdapterResult {
  std::optional<json> result;
  std::optional<std::string> error_code;
  Tick ticks = 1;
};

/// Tool adapter contract: (args, tick budget, seed) -> AdapterResult.
/// Adapters must be deterministic in their inputs.
using ToolAdapter = std::function<AdapterResult(const json& args, Tick tick_budget,
                                                std::uint64_t seed)>;

enum class OutcomeStatus { Ok, ToolError, Refused, Conflict, BreakerOpen, RateLimited, TimedOut };
std::string_view to_string(OutcomeStatus status);
OutcomeStatus outcome_status_from_string(std::string_view text);

struct GatewayOutcome {
  std::string call_id;
  OutcomeStatus status = OutcomeStatus::Refused;
  std::optional<json> result;
  std::optional<std::string> error_code;
  std::uint64_t attempts = 0; // 0 when the adapter was never reached
  Tick ticks_elapsed = 0;
};

json to_document(const GatewayOutcome& outcome);

struct IdempotencyRecord {
  std::string key;
  std::string call_fingerprint;
  GatewayOutcome outcome;
  Tick first_seen = 0;
};

// ---------------------------------------------------------------------------
// Circuit breaker (pure state machine)

enum class BreakerPhase { Closed, Open, HalfOpen };
std::string_view to_string(BreakerPhase phase);

struct BreakerState {
  std::string tool_name;
  BreakerPhase phase = BreakerPhase::Closed;
  std::uint64_t consecutive_failures = 0;
  Tick opened_at = 0;
  std::uint64_t failure_threshold = 5;
  Tick cooldown = 8;
  bool probe_inflight = false; // HalfOpen admits exactly one probe
};

struct BreakerAdmit {
  bool admit = false;
  BreakerState next;
};

/// Closed admits; Open admits after cooldown by transitioning to HalfOpen;
/// HalfOpen admits exactly one probe.
BreakerAdmit breaker_admit(const BreakerState& state, Tick now);

/// Success closes and zeroes failures; failure counts up and opens at the
/// threshold (HalfOpen failure reopens immediately with a fresh opened_at).
BreakerState breaker_on_result(BreakerState state, bool ok, Tick now);

// ---------------------------------------------------------------------------
// Saga log

enum class SagaStatus { Intended, Done, Compensated, Failed };
std::string_view to_string(SagaStatus status);

struct SagaEntry {
  std::string step_id;
  contracts::ToolCall intent;
  std::optional<contracts::ToolCall> compensation;
  SagaStatus status = SagaStatus::Intended;
};

struct SagaLog {
  std::string saga_id;
  std::vector<SagaEntry> entries; // append-ordered
};

struct GatewayConfig {
  std::uint64_t retry_max = 3; // total attempts, first try included
  std::uint64_t breaker_failure_threshold = 5;
  Tick breaker_cooldown = 8;
  /// Dual control for irreversible scope; absent means auto-deny.
  std::function<bool(const contracts::ToolCall&)> approval;
};

/// Deterministic backoff: base 1 tick doubling per attempt, plus a seeded
/// jitter of (stable hash of call id and attempt) mod the current base.
Tick backoff_ticks(std::uint64_t seed, const std::string& call_id, std::uint64_t attempt);

/// The execution boundary. Owns idempotency records, breaker states and rate
/// windows for one episode; every decision lands in the audit log. Outcome
/// commitment is serialized through the single owning thread.
class Gateway {
public:
  Gateway(const contracts::ToolRegistry& registry, audit::AuditLog& log, LogicalClock& clock,
          GatewayConfig config = {});

  void register_adapter(const std::string& name, const std::string& version, ToolAdapter adapter);
  bool has_adapter(const std::string& name, const std::string& version) const;

  /// Simulation verdicts are read through this hook (set once at wiring).
  void set_verdict_lookup(std::function<const assurance::Verdict*(const std::string&)> lookup);

  /// Performs a permitted call: dedup, rate limit, breaker, simulation gate,
  /// dual control, retries with deterministic backoff, outcome commit.
  GatewayOutcome execute(const contracts::Permit& permit, std::uint64_t seed);

  /// Compensates every Done entry in strict reverse order. A failing
  /// compensation halts the walk, leaves earlier entries untouched and
  /// escalates. Entries without a compensation call are flagged in the log.
  SagaLog compensate(SagaLog saga, std::uint64_t seed);

  const std::map<std::string, IdempotencyRecord>& idempotency_records() const {
    return idempotency_;
  }
  const BreakerState* breaker(const std::string& tool) const;

private:
  const contracts::ToolSpec& spec_for(const contracts::ToolCall& call) const;
  const ToolAdapter* adapter_for(const contracts::ToolCall& call) const;
  GatewayOutcome run_attempts(const contracts::ToolCall& call, const contracts::ToolSpec& spec,
                              std::uint64_t seed, bool compensation);
  GatewayOutcome commit(const contracts::ToolCall& call, GatewayOutcome outcome);

  const contracts::ToolRegistry& registry_;
  audit::AuditLog& log_;
  LogicalClock& clock_;
  GatewayConfig config_;
  std::function<const assurance::Verdict*(const std::string&)> verdict_lookup_;
  std::map<std::pair<std::string, std::string>, ToolAdapter> adapters_;
  std::map<std::string, IdempotencyRecord> idempotency_;
  std::map<std::string, BreakerState> breakers_;
  std::map<std::string, std::deque<Tick>> admissions_; // per-tool admission ticks
};

} // namespace agentkernel::gateway
