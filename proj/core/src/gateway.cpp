#include "agentkernel/gateway.hpp"

#include <stdexcept>

namespace agentkernel::gateway {

std::string_view to_string(OutcomeStatus status) {
  switch (status) {
  case OutcomeStatus::Ok: return "ok";
  case OutcomeStatus::ToolError: return "tool_error";
  case OutcomeStatus::Refused: return "refused";
  case OutcomeStatus::Conflict: return "conflict";
  case OutcomeStatus::BreakerOpen: return "breaker_open";
  case OutcomeStatus::RateLimited: return "rate_limited";
  case OutcomeStatus::TimedOut: return "timed_out";
  }
  return "refused";
}

OutcomeStatus outcome_status_from_string(std::string_view text) {
  if (text == "ok") return OutcomeStatus::Ok;
  if (text == "tool_error") return OutcomeStatus::ToolError;
  if (text == "refused") return OutcomeStatus::Refused;
  if (text == "conflict") return OutcomeStatus::Conflict;
  if (text == "breaker_open") return OutcomeStatus::BreakerOpen;
  if (text == "rate_limited") return OutcomeStatus::RateLimited;
  if (text == "timed_out") return OutcomeStatus::TimedOut;
  throw std::invalid_argument("unknown outcome status: " + std::string(text));
}

std::string_view to_string(BreakerPhase phase) {
  switch (phase) {
  case BreakerPhase::Closed: return "closed";
  case BreakerPhase::Open: return "open";
  case BreakerPhase::HalfOpen: return "half_open";
  }
  return "closed";
}

std::string_view to_string(SagaStatus status) {
  switch (status) {
  case SagaStatus::Intended: return "intended";
  case SagaStatus::Done: return "done";
  case SagaStatus::Compensated: return "compensated";
  case SagaStatus::Failed: return "failed";
  }
  return "intended";
}

json to_document(const GatewayOutcome& outcome) {
  json doc{{"call_id", outcome.call_id},
           {"status", std::string(to_string(outcome.status))},
           {"attempts", outcome.attempts},
           {"ticks_elapsed", outcome.ticks_elapsed}};
  if (outcome.result) doc["result"] = *outcome.result;
  if (outcome.error_code) doc["error_code"] = *outcome.error_code;
  return doc;
}

// ---------------------------------------------------------------------------
// Circuit breaker

BreakerAdmit breaker_admit(const BreakerState& state, Tick now) {
  BreakerState next = state;
  switch (state.phase) {
  case BreakerPhase::Closed:
    return {true, next};
  case BreakerPhase::Open:
    if (now >= state.opened_at + state.cooldown) {
      next.phase = BreakerPhase::HalfOpen;
      next.probe_inflight = true;
      return {true, next};
    }
    return {false, next};
  case BreakerPhase::HalfOpen:
    if (!state.probe_inflight) {
      next.probe_inflight = true;
      return {true, next};
    }
    return {false, next};
  }
  return {false, next};
}

BreakerState breaker_on_result(BreakerState state, bool ok, Tick now) {
  if (ok) {
    state.phase = BreakerPhase::Closed;
    state.consecutive_failures = 0;
    state.probe_inflight = false;
    return state;
  }
  state.consecutive_failures += 1;
  if (state.phase == BreakerPhase::HalfOpen || state.consecutive_failures >= state.failure_threshold) {
    state.phase = BreakerPhase::Open;
    state.opened_at = now;
  }
  state.probe_inflight = false;
  return state;
}

Tick backoff_ticks(std::uint64_t seed, const std::string& call_id, std::uint64_t attempt) {
  const Tick base = Tick{1} << (attempt - 1 > 16 ? 16 : attempt - 1);
  const std::uint64_t jitter =
      stable_hash64(std::to_string(seed) + ":" + call_id + ":" + std::to_string(attempt)) % base;
  return base + jitter;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(const contracts::ToolRegistry& registry, audit::AuditLog& log,
                 LogicalClock& clock, GatewayConfig config)
    : registry_(registry), log_(log), clock_(clock), config_(std::move(config)) {}

void Gateway::register_adapter(const std::string& name, const std::string& version,
                               ToolAdapter adapter) {
  adapters_[{name, version}] = std::move(adapter);
}

bool Gateway::has_adapter(const std::string& name, const std::string& version) const {
  return adapters_.contains({name, version});
}

void Gateway::set_verdict_lookup(
    std::function<const assurance::Verdict*(const std::string&)> lookup) {
  verdict_lookup_ = std::move(lookup);
}

const contracts::ToolSpec& Gateway::spec_for(const contracts::ToolCall& call) const {
  const auto* spec = registry_.find(call.tool_name, call.tool_version);
  if (spec == nullptr) {
    throw std::logic_error("no spec registered for permitted call to " + call.tool_name);
  }
  return *spec;
}

const ToolAdapter* Gateway::adapter_for(const contracts::ToolCall& call) const {
  const auto it = adapters_.find({call.tool_name, call.tool_version});
  return it == adapters_.end() ? nullptr : &it->second;
}

const BreakerState* Gateway::breaker(const std::string& tool) const {
  const auto it = breakers_.find(tool);
  return it == breakers_.end() ? nullptr : &it->second;
}

GatewayOutcome Gateway::run_attempts(const contracts::ToolCall& call,
                                     const contracts::ToolSpec& spec, std::uint64_t seed,
                                     bool compensation) {
  const ToolAdapter* adapter = adapter_for(call);
  if (adapter == nullptr) {
    throw std::logic_error("no adapter registered for " + call.tool_name + "@" +
                           call.tool_version);
  }
  GatewayOutcome outcome;
  outcome.call_id = call.call_id;
  std::uint64_t attempt = 0;
  while (true) {
    ++attempt;
    const AdapterResult r = (*adapter)(call.args, spec.timeout, seed);
    clock_.advance(r.ticks);
    outcome.ticks_elapsed += r.ticks;
    const bool timed_out = spec.timeout > 0 && r.ticks > spec.timeout;

    json invoked{{"call_id", call.call_id},
                 {"tool", call.tool_name},
                 {"version", call.tool_version},
                 {"scope", std::string(contracts::to_string(spec.scope))},
                 {"attempt", attempt},
                 {"args", call.args},
                 {"fingerprint", contracts::call_fingerprint(call)},
                 {"ticks", r.ticks},
                 {"compensation", compensation}};
    if (call.origin_step) invoked["origin_step"] = *call.origin_step;
    if (r.result) invoked["result"] = *r.result;
    if (r.error_code) invoked["error_code"] = *r.error_code;
    if (timed_out) invoked["timed_out"] = true;
    log_.append("gateway", "AdapterInvoked", std::move(invoked));

    std::string effective_error;
    if (timed_out) {
      outcome.status = OutcomeStatus::TimedOut;
      effective_error = "timeout";
      outcome.error_code = effective_error;
      outcome.result.reset();
    } else if (r.error_code) {
      outcome.status = OutcomeStatus::ToolError;
      effective_error = *r.error_code;
      outcome.error_code = effective_error;
      outcome.result.reset();
    } else {
      outcome.status = OutcomeStatus::Ok;
      outcome.result = r.result ? *r.result : json::object();
      outcome.error_code.reset();
      break;
    }
    // Retries only for keyed calls and only on declared transient codes.
    const bool transient = spec.transient_error_codes.contains(effective_error);
    if (!(transient && call.idempotency_key && attempt < config_.retry_max)) break;
    const Tick wait = backoff_ticks(seed, call.call_id, attempt);
    clock_.advance(wait);
    outcome.ticks_elapsed += wait;
  }
  outcome.attempts = attempt;
  return outcome;
}

GatewayOutcome Gateway::commit(const contracts::ToolCall& call, GatewayOutcome outcome) {
  log_.append("gateway", "OutcomeCommitted", to_document(outcome));
  return outcome;
}

GatewayOutcome Gateway::execute(const contracts::Permit& permit, std::uint64_t seed) {
  const contracts::ToolCall& call = permit.call.call();
  const contracts::ToolSpec& spec = spec_for(call);
  const Tick now = clock_.now();
  const std::string fingerprint = contracts::call_fingerprint(call);

  // Deduplication first: a duplicate submission must not consume rate or
  // breaker budget, and a key conflict is an error, never an overwrite.
  if (call.idempotency_key) {
    const auto it = idempotency_.find(*call.idempotency_key);
    if (it != idempotency_.end()) {
      if (it->second.call_fingerprint == fingerprint) {
        log_.append("gateway", "CacheHit",
                    json{{"call_id", call.call_id}, {"key", *call.idempotency_key},
                         {"fingerprint", fingerprint}});
        GatewayOutcome cached = it->second.outcome;
        cached.call_id = call.call_id;
        return cached;
      }
      log_.append("gateway", "Conflict",
                  json{{"call_id", call.call_id}, {"key", *call.idempotency_key},
                       {"stored_fingerprint", it->second.call_fingerprint},
                       {"fingerprint", fingerprint}});
      GatewayOutcome conflict;
      conflict.call_id = call.call_id;
      conflict.status = OutcomeStatus::Conflict;
      conflict.error_code = "IdempotencyKeyConflict";
      return commit(call, std::move(conflict));
    }
  }

  // Simulation gate: actuation requires a passing twin verdict for this step.
  if (!contracts::scope_leq(spec.scope, contracts::ToolScope::Simulate)) {
    const assurance::Verdict* verdict = nullptr;
    if (call.sim_verdict_ref && verdict_lookup_) {
      verdict = verdict_lookup_(*call.sim_verdict_ref);
    }
    const bool step_matches =
        verdict != nullptr &&
        (!call.origin_step || verdict->subject_ref == *call.origin_step);
    if (verdict == nullptr || !verdict->pass || !step_matches) {
      log_.append("gateway", "Refused",
                  json{{"call_id", call.call_id},
                       {"error_code", "SimulationGateUnsatisfied"},
                       {"sim_verdict_ref", call.sim_verdict_ref ? json(*call.sim_verdict_ref)
                                                                : json(nullptr)}});
      GatewayOutcome refused;
      refused.call_id = call.call_id;
      refused.status = OutcomeStatus::Refused;
      refused.error_code = "SimulationGateUnsatisfied";
      return commit(call, std::move(refused));
    }
  }

  // Dual control for irreversible scope.
  if (spec.scope == contracts::ToolScope::ActuateIrreversible) {
    const bool approved = config_.approval && config_.approval(call);
    log_.append("gateway", approved ? "ApprovalGranted" : "ApprovalDenied",
                json{{"call_id", call.call_id}, {"tool", call.tool_name}});
    if (!approved) {
      GatewayOutcome refused;
      refused.call_id = call.call_id;
      refused.status = OutcomeStatus::Refused;
      refused.error_code = "ApprovalDenied";
      return commit(call, std::move(refused));
    }
  }

  // Rate limit, window-exact: admissions within the trailing `window` ticks.
  if (spec.rate_limit.max_calls > 0 && spec.rate_limit.window > 0) {
    auto& admitted = admissions_[call.tool_name];
    const Tick floor = now >= spec.rate_limit.window ? now - spec.rate_limit.window + 1 : 0;
    while (!admitted.empty() && admitted.front() < floor) admitted.pop_front();
    if (admitted.size() >= spec.rate_limit.max_calls) {
      log_.append("gateway", "RateLimited",
                  json{{"call_id", call.call_id}, {"tool", call.tool_name},
                       {"window", spec.rate_limit.window},
                       {"max_calls", spec.rate_limit.max_calls}});
      GatewayOutcome limited;
      limited.call_id = call.call_id;
      limited.status = OutcomeStatus::RateLimited;
      return commit(call, std::move(limited));
    }
  }

  // Circuit breaker.
  auto breaker_it = breakers_.find(call.tool_name);
  if (breaker_it == breakers_.end()) {
    BreakerState fresh;
    fresh.tool_name = call.tool_name;
    fresh.failure_threshold = config_.breaker_failure_threshold;
    fresh.cooldown = config_.breaker_cooldown;
    breaker_it = breakers_.emplace(call.tool_name, std::move(fresh)).first;
  }
  const BreakerAdmit admit = breaker_admit(breaker_it->second, now);
  if (admit.next.phase != breaker_it->second.phase) {
    log_.append("gateway", "BreakerTransition",
                json{{"tool", call.tool_name},
                     {"from", std::string(to_string(breaker_it->second.phase))},
                     {"to", std::string(to_string(admit.next.phase))}});
  }
  breaker_it->second = admit.next;
  if (!admit.admit) {
    log_.append("gateway", "BreakerDenied",
                json{{"call_id", call.call_id}, {"tool", call.tool_name}});
    GatewayOutcome open;
    open.call_id = call.call_id;
    open.status = OutcomeStatus::BreakerOpen;
    return commit(call, std::move(open));
  }
  if (spec.rate_limit.max_calls > 0 && spec.rate_limit.window > 0) {
    admissions_[call.tool_name].push_back(now);
  }

  GatewayOutcome outcome = run_attempts(call, spec, seed, /*compensation=*/false);

  const bool ok = outcome.status == OutcomeStatus::Ok;
  const BreakerState after = breaker_on_result(breaker_it->second, ok, clock_.now());
  if (after.phase != breaker_it->second.phase) {
    log_.append("gateway", "BreakerTransition",
                json{{"tool", call.tool_name},
                     {"from", std::string(to_string(breaker_it->second.phase))},
                     {"to", std::string(to_string(after.phase))}});
  }
  breaker_it->second = after;

  if (call.idempotency_key) {
    idempotency_[*call.idempotency_key] =
        IdempotencyRecord{*call.idempotency_key, fingerprint, outcome, now};
  }
  return commit(call, std::move(outcome));
}

SagaLog Gateway::compensate(SagaLog saga, std::uint64_t seed) {
  for (auto it = saga.entries.rbegin(); it != saga.entries.rend(); ++it) {
    SagaEntry& entry = *it;
    if (entry.status != SagaStatus::Done) continue;
    if (!entry.compensation) {
      log_.append("gateway", "NonCompensatable",
                  json{{"saga_id", saga.saga_id}, {"step_id", entry.step_id}});
      continue;
    }
    const contracts::ToolSpec& spec = spec_for(*entry.compensation);
    const GatewayOutcome outcome = run_attempts(*entry.compensation, spec, seed,
                                                /*compensation=*/true);
    if (outcome.status == OutcomeStatus::Ok) {
      entry.status = SagaStatus::Compensated;
      log_.append("gateway", "SagaCompensated",
                  json{{"saga_id", saga.saga_id}, {"step_id", entry.step_id},
                       {"call_id", entry.compensation->call_id}});
      continue;
    }
    // Safe-halt: stop compensating, escalate, leave earlier entries Done.
    log_.append("gateway", "CompensationFailed",
                json{{"saga_id", saga.saga_id}, {"step_id", entry.step_id},
                     {"error_code", outcome.error_code ? *outcome.error_code : ""}});
    log_.append("gateway", "Escalation",
                json{{"target", "operator"},
                     {"reason", "compensation failed at step " + entry.step_id}});
    break;
  }
  return saga;
}

} // namespace agentkernel::gateway
