#include "agentkernel/audit.hpp"

#include <benchmark/benchmark.h>

using namespace agentkernel;

static void AuditAppend(benchmark::State& state) {
  const json payload{{"call_id", "call-E3"}, {"tool", "derate_command"}, {"attempt", 1},
                     {"ticks", 2}};
  for (auto _ : state) {
    state.PauseTiming();
    LogicalClock clock;
    audit::AuditLog log(&clock);
    state.ResumeTiming();
    for (int i = 0; i < state.range(0); ++i) {
      log.append("gateway", "AdapterInvoked", payload);
    }
    benchmark::DoNotOptimize(log.head_hash());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(AuditAppend)->Arg(64)->Arg(1024);

static void ChainVerify(benchmark::State& state) {
  LogicalClock clock;
  audit::AuditLog log(&clock);
  for (int i = 0; i < state.range(0); ++i) {
    log.append("gateway", "AdapterInvoked", json{{"i", i}});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(audit::verify_chain(log.events()));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(ChainVerify)->Arg(1024);
