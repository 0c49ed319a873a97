#include "agentkernel/planner.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace agentkernel::planner {

std::optional<Placeholder> parse_placeholder(const json& value) {
  if (!value.is_string()) return std::nullopt;
  const auto& text = value.get_ref<const std::string&>();
  if (text.size() < 2 || text[0] != '#') return std::nullopt;
  if (text[1] == '#') return std::nullopt; // "##..." escapes a literal '#'
  const std::size_t dot = text.find('.', 1);
  Placeholder p;
  if (dot == std::string::npos) {
    p.source_step = text.substr(1);
  } else {
    p.source_step = text.substr(1, dot - 1);
    p.output_path = text.substr(dot + 1);
  }
  return p;
}

json encode_placeholder(const Placeholder& p) {
  return p.output_path.empty() ? json("#" + p.source_step)
                               : json("#" + p.source_step + "." + p.output_path);
}

namespace {

void collect_placeholders(const json& value, const std::string& path,
                          std::map<std::string, Placeholder>& out) {
  if (auto p = parse_placeholder(value)) {
    out.emplace(path, std::move(*p));
    return;
  }
  if (value.is_object()) {
    for (auto it = value.begin(); it != value.end(); ++it) {
      collect_placeholders(it.value(), path.empty() ? it.key() : path + "." + it.key(), out);
    }
  } else if (value.is_array()) {
    for (std::size_t i = 0; i < value.size(); ++i) {
      collect_placeholders(value[i], path + "[" + std::to_string(i) + "]", out);
    }
  }
}

// Substitution walk shared by bind_step for intent and compensation calls.
json bind_value(const json& value, const std::map<std::string, json>& outputs,
                std::optional<BindError>& error) {
  if (error) return value;
  if (auto p = parse_placeholder(value)) {
    const auto it = outputs.find(p->source_step);
    if (it == outputs.end()) {
      error = BindError{BindErrorCode::MissingOutput, p->source_step, p->output_path};
      return value;
    }
    const auto resolved = document_at_path(it->second, p->output_path);
    if (!resolved) {
      error = BindError{BindErrorCode::PathNotFound, p->source_step, p->output_path};
      return value;
    }
    return *resolved;
  }
  if (value.is_string()) {
    const auto& text = value.get_ref<const std::string&>();
    if (text.size() >= 2 && text[0] == '#' && text[1] == '#') {
      return json(text.substr(1)); // unescape
    }
    return value;
  }
  if (value.is_object()) {
    json out = json::object();
    for (auto it = value.begin(); it != value.end(); ++it) {
      out[it.key()] = bind_value(it.value(), outputs, error);
    }
    return out;
  }
  if (value.is_array()) {
    json out = json::array();
    for (const auto& item : value) out.push_back(bind_value(item, outputs, error));
    return out;
  }
  return value;
}

} // namespace

std::map<std::string, Placeholder> step_placeholders(const PlanStep& step) {
  std::map<std::string, Placeholder> out;
  collect_placeholders(step.call_template.args, "", out);
  return out;
}

Plan Plan::make(std::string plan_id, std::string goal_ref, std::vector<PlanStep> steps) {
  Plan plan;
  plan.plan_id = std::move(plan_id);
  plan.goal_ref = std::move(goal_ref);
  plan.steps = std::move(steps);
  plan.total_cost_estimate = 0;
  for (const auto& step : plan.steps) plan.total_cost_estimate += step.cost_estimate;
  return plan;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json step_to_document(const PlanStep& step) {
  json pre = json::array();
  for (const auto& p : step.preconditions) pre.push_back(agentkernel::to_document(p));
  json post = json::array();
  for (const auto& p : step.postconditions) post.push_back(agentkernel::to_document(p));
  json doc{{"step_id", step.step_id},
           {"description", step.description},
           {"call_template", contracts::to_document(step.call_template)},
           {"preconditions", std::move(pre)},
           {"postconditions", std::move(post)},
           {"cost_estimate", step.cost_estimate}};
  if (step.compensation_template) {
    doc["compensation_template"] = contracts::to_document(*step.compensation_template);
  }
  return doc;
}

PlanStep step_from_document(const json& doc) {
  PlanStep step;
  step.step_id = doc.at("step_id").get<std::string>();
  step.description = doc.value("description", std::string{});
  step.call_template = contracts::call_from_document(doc.at("call_template"));
  for (const auto& p : doc.value("preconditions", json::array())) {
    step.preconditions.push_back(predicate_from_document(p));
  }
  for (const auto& p : doc.value("postconditions", json::array())) {
    step.postconditions.push_back(predicate_from_document(p));
  }
  if (doc.contains("compensation_template")) {
    step.compensation_template = contracts::call_from_document(doc.at("compensation_template"));
  }
  step.cost_estimate = doc.value("cost_estimate", std::uint64_t{0});
  return step;
}

} // namespace

json to_document(const Plan& plan) {
  json steps = json::array();
  for (const auto& step : plan.steps) steps.push_back(step_to_document(step));
  return json{{"plan_id", plan.plan_id},
              {"goal_ref", plan.goal_ref},
              {"steps", std::move(steps)},
              {"total_cost_estimate", plan.total_cost_estimate}};
}

Plan plan_from_document(const json& doc) {
  std::vector<PlanStep> steps;
  for (const auto& step : doc.at("steps")) steps.push_back(step_from_document(step));
  return Plan::make(doc.at("plan_id").get<std::string>(), doc.value("goal_ref", std::string{}),
                    std::move(steps));
}

std::string_view to_string(PlanErrorCode code) {
  switch (code) {
  case PlanErrorCode::CyclicPlan: return "CyclicPlan";
  case PlanErrorCode::DanglingPlaceholder: return "DanglingPlaceholder";
  case PlanErrorCode::UnknownTool: return "UnknownTool";
  case PlanErrorCode::StepInvalidArgs: return "StepInvalidArgs";
  case PlanErrorCode::StepUnauthorized: return "StepUnauthorized";
  case PlanErrorCode::MissingCompensation: return "MissingCompensation";
  case PlanErrorCode::CostExceedsBudget: return "CostExceedsBudget";
  }
  return "UnknownTool";
}

json to_document(const std::vector<PlanError>& errors) {
  json out = json::array();
  for (const auto& error : errors) {
    json doc{{"code", std::string(to_string(error.code))},
             {"step_id", error.step_id},
             {"detail", error.detail}};
    if (!error.validation.empty()) doc["validation"] = contracts::to_document(error.validation);
    out.push_back(std::move(doc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Static validation

namespace {

// Steps participating in any placeholder-reference cycle.
std::vector<bool> steps_on_cycles(const std::vector<std::vector<std::size_t>>& edges) {
  const std::size_t n = edges.size();
  std::vector<int> color(n, 0); // 0 white, 1 grey, 2 black
  std::vector<bool> on_cycle(n, false);
  std::vector<std::size_t> stack;

  const std::function<void(std::size_t)> dfs = [&](std::size_t u) {
    color[u] = 1;
    stack.push_back(u);
    for (const std::size_t v : edges[u]) {
      if (color[v] == 0) {
        dfs(v);
      } else if (color[v] == 1) {
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
          on_cycle[*it] = true;
          if (*it == v) break;
        }
      }
    }
    stack.pop_back();
    color[u] = 2;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (color[i] == 0) dfs(i);
  }
  return on_cycle;
}

} // namespace

std::vector<PlanError> validate_plan(const Plan& plan, const contracts::ToolRegistry& registry,
                                     const contracts::CapabilityToken& token,
                                     const assurance::Budget& budget, Tick now) {
  std::vector<PlanError> errors;

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    index_of[plan.steps[i].step_id] = i;
  }

  std::vector<std::map<std::string, Placeholder>> placeholders;
  std::vector<std::vector<std::size_t>> edges(plan.steps.size());
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    placeholders.push_back(step_placeholders(plan.steps[i]));
    for (const auto& [path, p] : placeholders.back()) {
      const auto it = index_of.find(p.source_step);
      if (it != index_of.end()) edges[i].push_back(it->second);
    }
  }
  const std::vector<bool> cyclic = steps_on_cycles(edges);

  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const PlanStep& step = plan.steps[i];

    if (cyclic[i]) {
      errors.push_back({PlanErrorCode::CyclicPlan, step.step_id,
                        "step participates in a placeholder reference cycle",
                        {}});
    } else {
      for (const auto& [path, p] : placeholders[i]) {
        const auto it = index_of.find(p.source_step);
        if (it == index_of.end()) {
          errors.push_back({PlanErrorCode::DanglingPlaceholder, step.step_id,
                            path + " references unknown step " + p.source_step,
                            {}});
        } else if (it->second >= i) {
          errors.push_back({PlanErrorCode::DanglingPlaceholder, step.step_id,
                            path + " references step " + p.source_step +
                                " that runs no earlier",
                            {}});
        }
      }
    }

    const contracts::ToolSpec* spec =
        registry.find(step.call_template.tool_name, step.call_template.tool_version);
    if (spec == nullptr) {
      errors.push_back({PlanErrorCode::UnknownTool, step.step_id,
                        step.call_template.tool_name + "@" + step.call_template.tool_version,
                        {}});
      continue;
    }

    std::set<std::string> opaque;
    for (const auto& [path, p] : placeholders[i]) opaque.insert(path);

    // Idempotency keys are assigned at bind time; the static check probes
    // with a pending key so everything else is still enforced.
    contracts::ToolCall probe = step.call_template;
    if (spec->requires_idempotency_key && !probe.idempotency_key) {
      probe.idempotency_key = "plan-validation-probe";
    }
    auto validation = contracts::validate_args(*spec, probe, opaque);
    if (auto* bad = std::get_if<std::vector<contracts::ValidationError>>(&validation)) {
      errors.push_back(
          {PlanErrorCode::StepInvalidArgs, step.step_id, "argument validation failed", *bad});
    }

    auto authz = contracts::authorize_check(probe, *spec, token, now, opaque);
    if (!authz.empty()) {
      errors.push_back(
          {PlanErrorCode::StepUnauthorized, step.step_id, "authorization dry run failed", authz});
    }

    if (!contracts::scope_leq(spec->scope, contracts::ToolScope::Simulate) &&
        !step.compensation_template) {
      errors.push_back({PlanErrorCode::MissingCompensation, step.step_id,
                        "actuating step has no compensation",
                        {}});
    }
  }

  std::uint64_t total = 0;
  for (const auto& step : plan.steps) total += step.cost_estimate;
  if (total > budget.max_cost_units) {
    errors.push_back({PlanErrorCode::CostExceedsBudget, "",
                      "plan cost " + std::to_string(total) + " exceeds budget " +
                          std::to_string(budget.max_cost_units),
                      {}});
  }
  return errors;
}

std::variant<contracts::ToolCall, BindError>
bind_step(const PlanStep& step, const std::map<std::string, json>& resolved_outputs) {
  std::optional<BindError> error;
  contracts::ToolCall bound = step.call_template;
  bound.args = bind_value(step.call_template.args, resolved_outputs, error);
  if (error) return *error;
  return bound;
}

// ---------------------------------------------------------------------------
// Governed interleaved loop

std::string_view to_string(EntryKind kind) {
  switch (kind) {
  case EntryKind::Thought: return "thought";
  case EntryKind::Action: return "action";
  case EntryKind::Observation: return "observation";
  }
  return "thought";
}

json to_document(const RepairHint& hint) {
  return json{{"failed_artifact_ref", hint.failed_artifact_ref}, {"diagnostic", hint.diagnostic}};
}

namespace {

void append_entry(ReactState& state, EntryKind kind, json payload, audit::AuditLog* log) {
  if (log) {
    log->append("planner", "ReactEntry",
                json{{"kind", std::string(to_string(kind))}, {"payload", payload}});
  }
  state.transcript.push_back({kind, std::move(payload)});
}

} // namespace

std::optional<assurance::WhyStopped> react_step(ReactState& state, const Proposer& proposer,
                                                const Governor& governor,
                                                const ReactConfig& config,
                                                audit::AuditLog* log) {
  if (state.steps_taken >= config.max_steps) {
    return assurance::WhyStopped{assurance::WhyStoppedCode::BudgetExceeded, "steps"};
  }
  std::uint64_t refusals = 0;
  while (true) {
    const Proposal proposal = proposer(state, config.seed);
    if (const auto* thought = std::get_if<Thought>(&proposal)) {
      append_entry(state, EntryKind::Thought, json{{"text", thought->text}}, log);
      state.steps_taken += 1;
      return std::nullopt;
    }
    const auto& call = std::get<contracts::ToolCall>(proposal);
    const auto decision = governor(call);
    if (const auto* approval = std::get_if<GovernorApproval>(&decision)) {
      append_entry(state, EntryKind::Action, contracts::to_document(call), log);
      append_entry(state, EntryKind::Observation, approval->observation, log);
      state.steps_taken += 1;
      return std::nullopt;
    }
    const auto& refusal = std::get<GovernorRefusal>(decision);
    // The refusal is what the proposer observes next; the rejected call never
    // becomes an Action entry, so every Action in a transcript was dispatched.
    append_entry(state, EntryKind::Observation,
                 json{{"governed_refusal", true},
                      {"reason", refusal.reason},
                      {"detail", refusal.detail},
                      {"proposal", contracts::to_document(call)}},
                 log);
    refusals += 1;
    if (refusals >= config.reproposal_limit) {
      if (log) {
        log->append("planner", "RepairHint",
                    to_document(RepairHint{call.call_id,
                                           "proposal refused " + std::to_string(refusals) +
                                               " times: " + refusal.reason}));
      }
      return assurance::WhyStopped{assurance::WhyStoppedCode::VerifierRejection,
                                   "refusal limit reached"};
    }
  }
}

assurance::WhyStopped run_react(ReactState& state, const Proposer& proposer,
                                const Governor& governor, const ReactConfig& config,
                                audit::AuditLog* log) {
  while (true) {
    if (auto halt = react_step(state, proposer, governor, config, log)) {
      if (log) {
        log->append("planner", "ReactHalted", assurance::to_document(*halt));
      }
      return *halt;
    }
  }
}

// ---------------------------------------------------------------------------
// Budgeted best-first search

SearchResult search(const json& root_content, const NodeProposer& proposer,
                    const NodeScorer& scorer, const SearchBudget& budget, audit::AuditLog* log,
                    std::uint64_t convergence_window) {
  SearchResult result;
  std::vector<SearchNode>& nodes = result.explored;

  const NodeScore root_score = scorer(root_content);
  nodes.push_back(
      {"n0", root_content, root_score.score, std::nullopt, 0, root_score.feasible});
  std::size_t best = 0;

  if (log) {
    log->append("planner", "SearchStarted",
                json{{"max_expansions", budget.max_expansions},
                     {"max_depth", budget.max_depth},
                     {"beam_width", budget.beam_width},
                     {"convergence_window", convergence_window},
                     {"root_score", root_score.score}});
  }

  std::vector<std::size_t> frontier;
  if (root_score.feasible && (budget.max_depth == 0 || budget.max_depth > 0)) {
    frontier.push_back(0);
  }

  std::uint64_t rounds_without_improvement = 0;
  std::uint64_t last_children = 0;
  std::uint64_t last_infeasible = 0;
  assurance::WhyStopped why{assurance::WhyStoppedCode::Convergence, ""};

  while (true) {
    if (result.expansions >= budget.max_expansions) {
      why = {assurance::WhyStoppedCode::BudgetExhausted, "max_expansions"};
      break;
    }
    if (frontier.empty()) {
      const bool contradiction =
          (last_children > 0 && last_infeasible == last_children) ||
          (result.expansions == 0 && !nodes[0].feasible);
      why = contradiction
                ? assurance::WhyStopped{assurance::WhyStoppedCode::Contradiction,
                                        "frontier emptied by infeasible candidates"}
                : assurance::WhyStopped{assurance::WhyStoppedCode::Convergence,
                                        "candidates exhausted"};
      break;
    }
    if (rounds_without_improvement >= convergence_window) {
      why = {assurance::WhyStoppedCode::Convergence,
             "best unchanged for " + std::to_string(convergence_window) + " rounds"};
      break;
    }

    const double best_before = nodes[best].score;
    std::vector<std::size_t> pool;
    last_children = 0;
    last_infeasible = 0;
    bool out_of_budget = false;

    for (const std::size_t idx : frontier) {
      if (result.expansions >= budget.max_expansions) {
        out_of_budget = true;
        break;
      }
      result.expansions += 1;
      const std::vector<json> children = proposer(nodes[idx].content);
      json expansion{{"node_id", nodes[idx].node_id}, {"children", json::array()}};
      for (const auto& content : children) {
        const NodeScore s = scorer(content);
        SearchNode child{"n" + std::to_string(nodes.size()), content, s.score,
                         nodes[idx].node_id, nodes[idx].depth + 1, s.feasible};
        expansion["children"].push_back(
            json{{"node_id", child.node_id}, {"score", s.score}, {"feasible", s.feasible}});
        nodes.push_back(std::move(child));
        const std::size_t child_idx = nodes.size() - 1;
        last_children += 1;
        if (!s.feasible) {
          last_infeasible += 1;
          continue;
        }
        if (s.score > nodes[best].score) best = child_idx;
        if (budget.max_depth == 0 || nodes[child_idx].depth < budget.max_depth) {
          pool.push_back(child_idx);
        }
      }
      if (log) log->append("planner", "NodeExpanded", std::move(expansion));
    }
    if (out_of_budget) {
      why = {assurance::WhyStoppedCode::BudgetExhausted, "max_expansions"};
      break;
    }

    std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      if (nodes[a].score != nodes[b].score) return nodes[a].score > nodes[b].score;
      return a < b; // creation order
    });
    if (pool.size() > budget.beam_width) pool.resize(budget.beam_width);
    frontier = std::move(pool);

    if (nodes[best].score > best_before) {
      rounds_without_improvement = 0;
    } else {
      rounds_without_improvement += 1;
    }
  }

  result.best = nodes[best];
  result.why_stopped = why;
  if (log) {
    log->append("planner", "SearchStopped",
                json{{"why", assurance::to_document(why)},
                     {"best", result.best.node_id},
                     {"best_score", result.best.score},
                     {"expansions", result.expansions},
                     {"explored", nodes.size()}});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scripted fixtures

ScriptedTree ScriptedTree::from_document(const json& doc) {
  ScriptedTree tree;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    tree.nodes_[it.key()] = it.value();
  }
  return tree;
}

ScriptedTree ScriptedTree::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scripted tree fixture: " + path);
  return from_document(json::parse(in));
}

NodeProposer ScriptedTree::proposer() const {
  const auto nodes = nodes_;
  return [nodes](const json& content) -> std::vector<json> {
    const auto it = nodes.find(canonical_dump(content));
    if (it == nodes.end() || !it->second.contains("children")) return {};
    std::vector<json> children;
    for (const auto& child : it->second.at("children")) children.push_back(child);
    return children;
  };
}

NodeScorer ScriptedTree::scorer() const {
  const auto nodes = nodes_;
  return [nodes](const json& content) -> NodeScore {
    const auto it = nodes.find(canonical_dump(content));
    if (it == nodes.end()) return {0.0, true};
    NodeScore score;
    score.score = it->second.value("score", 0.0);
    score.feasible = it->second.value("feasible", true);
    return score;
  };
}

} // namespace agentkernel::planner
