#include "agentkernel/canonical.hpp"

#include <benchmark/benchmark.h>

using namespace agentkernel;

namespace {

json sample_document(std::size_t fields) {
  json doc;
  for (std::size_t i = 0; i < fields; ++i) {
    const std::string key = "field_" + std::to_string(i);
    switch (i % 4) {
    case 0: doc[key] = static_cast<std::int64_t>(i); break;
    case 1: doc[key] = 0.125 * static_cast<double>(i); break;
    case 2: doc[key] = "value-" + std::to_string(i); break;
    default: doc[key] = json::array({1, 2.5, "three"}); break;
    }
  }
  return doc;
}

} // namespace

static void CanonicalDump(benchmark::State& state) {
  const json doc = sample_document(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(canonical_dump(doc));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(CanonicalDump)->RangeMultiplier(4)->Range(4, 256)->Complexity();

static void CanonicalHash(benchmark::State& state) {
  const json doc = sample_document(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(canonical_hash(doc));
  }
}
BENCHMARK(CanonicalHash);
