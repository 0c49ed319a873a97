#include "agentkernel/gateway.hpp"

#include <benchmark/benchmark.h>

using namespace agentkernel;

namespace {

contracts::ToolSpec probe_spec() {
  contracts::ToolSpec spec;
  spec.name = "probe";
  spec.version = "1";
  spec.scope = contracts::ToolScope::ReadOnly;
  spec.timeout = 100;
  spec.requires_idempotency_key = true;
  return spec;
}

contracts::CapabilityToken wide_token() {
  contracts::CapabilityToken token;
  token.token_id = "bench";
  token.tool_allowlist = {"*"};
  token.scope_ceiling = contracts::ToolScope::ActuateIrreversible;
  token.expiry = 1u << 30;
  token.max_invocations = 1u << 30;
  return token;
}

} // namespace

static void GatewayExecute(benchmark::State& state) {
  contracts::ToolRegistry registry;
  registry.add(probe_spec());
  LogicalClock clock;
  audit::AuditLog log(&clock);
  gateway::Gateway gw(registry, log, clock, {});
  gw.register_adapter("probe", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::make_optional<json>(json{{"ok", true}}), std::nullopt, 1};
  });
  const auto token = wide_token();
  const auto* spec = registry.find("probe", "1");
  std::uint64_t n = 0;
  for (auto _ : state) {
    contracts::ToolCall call;
    call.call_id = "c" + std::to_string(n);
    call.tool_name = "probe";
    call.tool_version = "1";
    call.idempotency_key = "k" + std::to_string(n++);
    auto validated = std::get<contracts::ValidatedCall>(contracts::validate_args(*spec, call));
    auto permit = std::get<contracts::Permit>(
        contracts::authorize(validated, *spec, token, clock.now()));
    benchmark::DoNotOptimize(gw.execute(permit, 1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(GatewayExecute);

static void GatewayCacheHit(benchmark::State& state) {
  contracts::ToolRegistry registry;
  registry.add(probe_spec());
  LogicalClock clock;
  audit::AuditLog log(&clock);
  gateway::Gateway gw(registry, log, clock, {});
  gw.register_adapter("probe", "1", [](const json&, Tick, std::uint64_t) {
    return gateway::AdapterResult{std::make_optional<json>(json{{"ok", true}}), std::nullopt, 1};
  });
  const auto token = wide_token();
  const auto* spec = registry.find("probe", "1");
  contracts::ToolCall call;
  call.call_id = "c0";
  call.tool_name = "probe";
  call.tool_version = "1";
  call.idempotency_key = "hot-key";
  auto validated = std::get<contracts::ValidatedCall>(contracts::validate_args(*spec, call));
  auto permit =
      std::get<contracts::Permit>(contracts::authorize(validated, *spec, token, clock.now()));
  gw.execute(permit, 1); // prime the idempotency record
  for (auto _ : state) {
    benchmark::DoNotOptimize(gw.execute(permit, 1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(GatewayCacheHit);
