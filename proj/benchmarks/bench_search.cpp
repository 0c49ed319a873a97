#include "agentkernel/planner.hpp"

#include <benchmark/benchmark.h>

using namespace agentkernel;

namespace {

// Complete binary tree of the requested depth with synthetic scores.
json synthetic_tree(int depth) {
  json tree = json::object();
  const std::function<void(int, int)> build = [&](int id, int level) {
    json node;
    node["score"] = 1.0 / (1.0 + static_cast<double>(id));
    if (level < depth) {
      node["children"] = json::array({json{{"n", 2 * id + 1}}, json{{"n", 2 * id + 2}}});
    }
    tree[canonical_dump(json{{"n", id}})] = node;
    if (level < depth) {
      build(2 * id + 1, level + 1);
      build(2 * id + 2, level + 1);
    }
  };
  build(0, 0);
  return tree;
}

} // namespace

static void BeamSearch(benchmark::State& state) {
  const auto tree = synthetic_tree(static_cast<int>(state.range(0)));
  const auto scripted = planner::ScriptedTree::from_document(tree);
  planner::SearchBudget budget;
  budget.max_expansions = 1u << 16;
  budget.beam_width = 8;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        planner::search(json{{"n", 0}}, scripted.proposer(), scripted.scorer(), budget));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BeamSearch)->DenseRange(4, 10, 2)->Complexity();
