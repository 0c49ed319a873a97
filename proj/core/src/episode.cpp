#include "agentkernel/harness.hpp"
#include "agentkernel/version.hpp"

#include <deque>
#include <filesystem>
#include <iostream>
#include <memory>

namespace agentkernel::harness {

namespace {

using assurance::WhyStopped;
using assurance::WhyStoppedCode;

// ---------------------------------------------------------------------------
// Playback: adapters and approvals reconstructed from a recorded trace.

struct Playback {
  std::map<std::string, std::deque<gateway::AdapterResult>> adapter_results;
  std::deque<bool> approvals;

  static Playback from_trace(const audit::EpisodeTrace& trace) {
    Playback pb;
    for (const auto& event : trace.events) {
      if (event.kind == "AdapterInvoked") {
        gateway::AdapterResult r;
        if (event.payload.contains("result")) r.result = event.payload.at("result");
        if (event.payload.contains("error_code")) {
          r.error_code = event.payload.at("error_code").get<std::string>();
        }
        r.ticks = event.payload.value("ticks", Tick{1});
        pb.adapter_results[event.payload.at("tool").get<std::string>()].push_back(std::move(r));
      } else if (event.kind == "ApprovalGranted") {
        pb.approvals.push_back(true);
      } else if (event.kind == "ApprovalDenied") {
        pb.approvals.push_back(false);
      }
    }
    return pb;
  }
};

void register_playback_adapters(gateway::Gateway& gw, const contracts::ToolRegistry& registry,
                                const std::shared_ptr<Playback>& pb) {
  for (const auto* spec : registry.list()) {
    const std::string tool = spec->name;
    gw.register_adapter(tool, spec->version,
                        [pb, tool](const json&, Tick, std::uint64_t) -> gateway::AdapterResult {
                          auto& queue = pb->adapter_results[tool];
                          if (queue.empty()) {
                            throw audit::ReplayError(
                                audit::ReplayError::Code::TruncatedTrace,
                                "replay requested more " + tool +
                                    " invocations than the trace recorded");
                          }
                          gateway::AdapterResult r = std::move(queue.front());
                          queue.pop_front();
                          return r;
                        });
  }
}

// ---------------------------------------------------------------------------
// Episode kernel

struct Kernel {
  const ScenarioConfig& config;
  const RunOptions& options;
  std::uint64_t seed;

  LogicalClock clock;
  audit::AuditLog log{&clock};
  contracts::ToolRegistry registry = mock_tool_registry();
  assurance::VerdictStore verdicts;
  IdSequence verdict_ids{"v"};
  IdSequence intention_ids{"intent-"};
  std::unique_ptr<assurance::Supervisor> supervisor;
  std::unique_ptr<memory::MemoryStore> store;
  std::unique_ptr<gateway::Gateway> gw;

  ExitSummary summary;

  explicit Kernel(const ScenarioConfig& cfg, const RunOptions& opts)
      : config(cfg), options(opts), seed(cfg.seed) {
    supervisor = std::make_unique<assurance::Supervisor>(config.supervisor, &log);
    store = std::make_unique<memory::MemoryStore>(&log, &clock);

    gateway::GatewayConfig gwc;
    gwc.retry_max = 3;
    std::shared_ptr<Playback> pb;
    if (options.playback) pb = std::make_shared<Playback>(Playback::from_trace(*options.playback));
    if (pb) {
      gwc.approval = [pb](const contracts::ToolCall&) {
        if (pb->approvals.empty()) return false;
        const bool granted = pb->approvals.front();
        pb->approvals.pop_front();
        return granted;
      };
    } else if (options.approval) {
      const bool fixed = *options.approval;
      gwc.approval = [fixed](const contracts::ToolCall&) { return fixed; };
    } else if (config.interactive) {
      gwc.approval = [](const contracts::ToolCall& call) {
        std::cout << "approve irreversible call " << call.call_id << " to " << call.tool_name
                  << "? [y/N] " << std::flush;
        std::string answer;
        std::getline(std::cin, answer);
        return !answer.empty() && (answer[0] == 'y' || answer[0] == 'Y');
      };
    } // else absent: auto-deny

    gw = std::make_unique<gateway::Gateway>(registry, log, clock, std::move(gwc));
    if (pb) {
      register_playback_adapters(*gw, registry, pb);
    } else {
      register_mock_adapters(*gw, config);
    }
    gw->set_verdict_lookup(
        [this](const std::string& id) { return verdicts.find(id); });
  }

  contracts::CapabilityToken executor_token() const {
    for (const auto& grant : config.tokens) {
      if (grant.role == "executor") return grant.token;
    }
    return default_executor_token();
  }

  void preload_knowledge() {
    const json entries = config.fixtures.value("knowledge", json::array());
    const memory::WriterCapability curator{"fleet-kb", true};
    const memory::WriterCapability field{"field-report", false};
    for (const auto& entry : entries) {
      memory::MemoryRecord record;
      record.id = entry.at("id").get<std::string>();
      record.content = entry.value("content", json());
      record.source_uri = entry.value("source_uri", std::string{});
      record.tier = memory::tier_from_string(entry.value("tier", std::string{"untrusted"}));
      if (entry.contains("validity")) {
        record.validity = entry.at("validity").get<std::map<std::string, json>>();
      }
      if (entry.contains("ttl")) record.ttl = entry.at("ttl").get<Tick>();
      if (entry.contains("corroborations")) {
        record.corroborations = entry.at("corroborations").get<std::set<std::string>>();
      }
      const auto& writer = record.tier == memory::Tier::Untrusted ? field : curator;
      store->write(record, memory::WritePolicy{"kb-preload/v1", memory::SanitizePolicy::defaults()},
                   writer);
      if (entry.value("publish", false)) {
        const assurance::Verifier checker{
            "kb-source-check", "1",
            [](const json&) { return std::make_pair(true, std::vector<std::string>{}); }};
        const auto verdict =
            assurance::verify(record.id, record.content, {checker}, verdict_ids, &verdicts, &log);
        store->promote(record.id, verdict); // Draft -> Verified
        store->promote(record.id, verdict); // Verified -> Published (needs corroboration)
      }
    }
  }

  void safe_halt(const std::string& subject, const std::string& explanation) {
    supervisor->safe_halt(subject, explanation);
    summary.why_stopped = {WhyStoppedCode::SafetyHalt, explanation};
  }

  // ---------------------------------------------------------------------
  // Diagnosis episode

  void run_diagnosis() {
    preload_knowledge();

    memory::RetrievalPolicy rpolicy;
    rpolicy.policy_id = "diagnosis-retrieval/v1";
    rpolicy.top_k = 3;
    const json firmware = config.fixtures.value("firmware", json::object());
    if (firmware.contains("firmware_version")) {
      rpolicy.context["firmware_version"] = firmware.at("firmware_version");
    }
    store->retrieve("over temperature thermal battery " + config.vehicle_id, rpolicy,
                    clock.now());

    const json goal{{"objective", json{{"metric", "thermal_risk"}, {"target", "bounded"}}},
                    {"constraints", json::array({"reversible_actions_only", "within_budget"})}};
    const assurance::Verifier feasibility{
        "goal-feasibility", "1", [this](const json& subject) {
          std::vector<std::string> reasons;
          if (config.budget.max_steps == 0) reasons.push_back("no_step_budget");
          if (!subject.contains("objective")) reasons.push_back("missing_objective");
          return std::make_pair(reasons.empty(), reasons);
        }};
    const auto adoption = assurance::adoption_filter(goal, {feasibility}, intention_ids,
                                                     verdict_ids, &verdicts, &log);
    if (std::holds_alternative<assurance::GoalRejected>(adoption)) {
      summary.why_stopped = {WhyStoppedCode::VerifierRejection, "goal adoption failed"};
      return;
    }

    const planner::Plan plan = diagnosis_plan(config);
    contracts::CapabilityToken token = executor_token();
    const auto plan_errors =
        planner::validate_plan(plan, registry, token, config.budget, clock.now());
    log.append("planner", "PlanValidated",
               json{{"plan_id", plan.plan_id},
                    {"ok", plan_errors.empty()},
                    {"total_cost_estimate", plan.total_cost_estimate},
                    {"errors", planner::to_document(plan_errors)}});
    if (!plan_errors.empty()) {
      safe_halt(plan.plan_id, "plan validation failed with " +
                                  std::to_string(plan_errors.size()) + " error(s)");
      return;
    }

    std::map<std::string, json> outputs;
    assurance::BudgetLedger ledger;
    std::vector<memory::MemoryRecord> episode_records;
    memory::WorkingSet ws;
    ws.capacity = 2;
    gateway::SagaLog saga{"saga-" + config.episode_id, {}};
    double current_risk = 0.0;
    std::map<std::string, std::string> sim_verdict_for_step;
    std::map<std::string, std::uint64_t> calls_constructed;
    bool halted = false;

    const memory::WriterCapability kernel_writer{"kernel", true};
    const memory::WriterCapability field_writer{"field-report", false};

    for (const auto& step : plan.steps) {
      const std::string& tool = step.call_template.tool_name;

      assurance::BudgetLedger increment;
      increment.steps = 1;
      increment.cost_units = step.cost_estimate;
      increment.per_tool[tool] = 1;
      const auto halt = assurance::check_budget(ledger, config.budget, increment);
      log.append("assurance", "BudgetCheck",
                 json{{"ledger", assurance::to_document(ledger)},
                      {"increment", assurance::to_document(increment)},
                      {"budget", assurance::to_document(config.budget)},
                      {"decision", halt ? "halt" : "continue"},
                      {"detail", halt ? halt->detail : ""}});
      if (halt) {
        summary.why_stopped = *halt;
        halted = true;
        break;
      }

      json outputs_doc = json::object();
      for (const auto& [id, doc] : outputs) outputs_doc[id] = doc;
      bool skip = false;
      for (const auto& guard : step.preconditions) {
        if (!eval_predicate(guard, outputs_doc)) {
          skip = true;
          break;
        }
      }
      if (skip) {
        log.append("planner", "StepSkipped",
                   json{{"step_id", step.step_id}, {"reason", "precondition_unsatisfied"}});
        continue;
      }

      auto bound = planner::bind_step(step, outputs);
      if (std::holds_alternative<planner::BindError>(bound)) {
        safe_halt(step.step_id, "binding failed for step " + step.step_id);
        halted = true;
        break;
      }
      contracts::ToolCall call = std::get<contracts::ToolCall>(std::move(bound));
      call.call_id = "call-" + step.step_id;
      call.issuer = "executor";
      call.origin_step = step.step_id;
      call.idempotency_key = config.episode_id + "-" + step.step_id;
      const auto sim_it = sim_verdict_for_step.find(step.step_id);
      if (sim_it != sim_verdict_for_step.end()) call.sim_verdict_ref = sim_it->second;
      log.append("planner", "StepBound",
                 json{{"step_id", step.step_id}, {"call_id", call.call_id}});

      const std::uint64_t call_index = calls_constructed[tool]++;
      for (const auto& fault : config.faults) {
        if (fault.mode == FaultMode::SchemaMismatch && fault.target_tool == tool &&
            fault.at_call_index == call_index) {
          call.args["__injected"] = json{{"unexpected", true}};
        }
      }

      auto validated = contracts::validate_call(registry, call);
      if (const auto* errors = std::get_if<std::vector<contracts::ValidationError>>(&validated)) {
        log.append("contracts", "CallValidated",
                   json{{"call_id", call.call_id}, {"tool", tool}, {"ok", false},
                        {"errors", contracts::to_document(*errors)}});
        saga = gw->compensate(std::move(saga), seed);
        safe_halt(call.call_id, "schema validation failed for " + call.call_id);
        halted = true;
        break;
      }
      log.append("contracts", "CallValidated",
                 json{{"call_id", call.call_id}, {"tool", tool}, {"ok", true}});

      const contracts::ToolSpec& spec = *registry.find(tool, call.tool_version);
      auto authz = contracts::authorize(std::get<contracts::ValidatedCall>(validated), spec,
                                        token, clock.now());
      if (const auto* errors = std::get_if<std::vector<contracts::ValidationError>>(&authz)) {
        log.append("contracts", "Refused",
                   json{{"call_id", call.call_id}, {"errors", contracts::to_document(*errors)}});
        saga = gw->compensate(std::move(saga), seed);
        safe_halt(call.call_id, "authorization refused for " + call.call_id);
        halted = true;
        break;
      }
      contracts::Permit permit = std::get<contracts::Permit>(std::move(authz));
      token = permit.updated_token;
      log.append("contracts", "Permitted",
                 json{{"call_id", call.call_id}, {"token_id", permit.token_id},
                      {"invocations_used", token.invocations_used}});

      const bool actuating = !contracts::scope_leq(spec.scope, contracts::ToolScope::Simulate);
      assurance::Verdict gate_verdict;
      if (actuating && sim_it != sim_verdict_for_step.end()) {
        const auto* stored = verdicts.find(sim_it->second);
        gate_verdict = stored ? *stored : assurance::Verdict{};
      } else {
        gate_verdict = assurance::verify(step.step_id + "/policy",
                                         contracts::to_document(call), {}, verdict_ids,
                                         &verdicts, &log);
      }
      const double risk = actuating ? current_risk : 0.0;
      const auto decision = supervisor->decide_action(call, spec.scope, risk, gate_verdict);
      if (std::holds_alternative<assurance::SafeHalt>(decision)) {
        saga = gw->compensate(std::move(saga), seed);
        safe_halt(call.call_id, std::get<assurance::SafeHalt>(decision).explanation);
        halted = true;
        break;
      }
      supervisor->supervise_action(call, spec.scope, risk, gate_verdict);

      if (actuating) {
        saga.entries.push_back({step.step_id, call, std::nullopt, gateway::SagaStatus::Intended});
        log.append("gateway", "SagaIntended",
                   json{{"saga_id", saga.saga_id}, {"step_id", step.step_id},
                        {"call_id", call.call_id}});
      }

      const gateway::GatewayOutcome outcome = gw->execute(permit, seed);
      assurance::BudgetLedger consumed;
      consumed.steps = 1;
      consumed.cost_units = step.cost_estimate;
      consumed.wall_ticks = outcome.ticks_elapsed;
      consumed.per_tool[tool] = 1;
      ledger += consumed;

      if (outcome.status != gateway::OutcomeStatus::Ok) {
        if (outcome.status == gateway::OutcomeStatus::ToolError ||
            outcome.status == gateway::OutcomeStatus::TimedOut) {
          const auto degraded_to = config.supervisor.degraded_modes.empty()
                                       ? assurance::DegradedMode::MonitorOnly
                                       : config.supervisor.degraded_modes.front();
          supervisor->degrade(degraded_to,
                              "tool " + tool + " failing: " +
                                  outcome.error_code.value_or("unknown"));
        }
        if (!saga.entries.empty()) saga = gw->compensate(std::move(saga), seed);
        safe_halt(call.call_id,
                  "tool " + tool + " outcome " +
                      std::string(gateway::to_string(outcome.status)) + " after " +
                      std::to_string(outcome.attempts) + " attempt(s)");
        halted = true;
        break;
      }

      outputs[step.step_id] = *outcome.result;
      if (actuating) {
        summary.actions_taken.push_back(tool);
        auto& entry = saga.entries.back();
        entry.status = gateway::SagaStatus::Done;
        if (step.compensation_template) {
          planner::PlanStep comp_step;
          comp_step.step_id = step.step_id;
          comp_step.call_template = *step.compensation_template;
          auto comp_bound = planner::bind_step(comp_step, outputs);
          if (std::holds_alternative<contracts::ToolCall>(comp_bound)) {
            contracts::ToolCall comp = std::get<contracts::ToolCall>(std::move(comp_bound));
            comp.call_id = "comp-" + step.step_id;
            comp.issuer = "executor";
            comp.origin_step = step.step_id;
            comp.idempotency_key = config.episode_id + "-comp-" + step.step_id;
            entry.compensation = std::move(comp);
          }
        }
        log.append("gateway", "SagaStepDone",
                   json{{"saga_id", saga.saga_id}, {"step_id", step.step_id}});
      }

      const assurance::Verifier postcondition{
          "postcondition", "1", [&step](const json& subject) {
            std::vector<std::string> reasons;
            for (const auto& p : step.postconditions) {
              if (!eval_predicate(p, subject)) {
                reasons.push_back("postcondition_failed:" + p.path);
              }
            }
            return std::make_pair(reasons.empty(), reasons);
          }};
      const auto post_verdict = assurance::verify(step.step_id, *outcome.result, {postcondition},
                                                  verdict_ids, &verdicts, &log);
      if (!post_verdict.pass) {
        log.append("planner", "RepairHint",
                   planner::to_document(planner::RepairHint{
                       step.step_id, "postconditions failed; see verdict " +
                                         post_verdict.verdict_id}));
        if (!saga.entries.empty()) saga = gw->compensate(std::move(saga), seed);
        safe_halt(step.step_id, "postconditions failed for step " + step.step_id);
        halted = true;
        break;
      }

      if (step.step_id == "E2") {
        current_risk = outcome.result->value("risk", 0.0);
        // The twin run covers the actuation steps: issue their simulation
        // verdicts now, before any of them may execute.
        const assurance::Verifier sim_check{
            "twin-simulation", "1", [](const json& subject) {
              std::vector<std::string> reasons;
              if (!subject.contains("risk")) {
                reasons.push_back("missing_risk");
              } else {
                const double r = subject.at("risk").get<double>();
                if (r < 0.0 || r > 1.0) reasons.push_back("risk_out_of_bounds");
              }
              return std::make_pair(reasons.empty(), reasons);
            }};
        for (const auto& target : plan.steps) {
          const auto* target_spec =
              registry.find(target.call_template.tool_name, target.call_template.tool_version);
          if (target_spec == nullptr ||
              contracts::scope_leq(target_spec->scope, contracts::ToolScope::Simulate)) {
            continue;
          }
          const auto sim_verdict = assurance::verify(target.step_id, *outcome.result,
                                                     {sim_check}, verdict_ids, &verdicts, &log);
          if (sim_verdict.pass) {
            sim_verdict_for_step[target.step_id] = sim_verdict.verdict_id;
          }
        }
      }

      memory::MemoryRecord record;
      record.id = "ep-" + config.episode_id + "-" + step.step_id;
      record.content = json{{"task", "over_temperature_diagnosis"},
                            {"action", tool},
                            {"outcome", *outcome.result}};
      record.source_uri = "tool:" + tool;
      record.tier = memory::Tier::Silver;
      store->write(record, memory::WritePolicy{"episodic/v1", memory::SanitizePolicy::defaults()},
                   kernel_writer);
      if (const auto* stored = store->find(record.id)) episode_records.push_back(*stored);
      if (auto paged = store->page_in({record.id}, std::move(ws), clock.now());
          std::holds_alternative<memory::WorkingSet>(paged)) {
        ws = std::get<memory::WorkingSet>(std::move(paged));
      }

      if (step.step_id == "E1" && outcome.result->contains("operator_note")) {
        memory::MemoryRecord note;
        note.id = "note-" + config.episode_id;
        note.content = json{{"note", outcome.result->at("operator_note")}};
        note.source_uri = "operator:field-report";
        note.tier = memory::Tier::Untrusted;
        store->write(note, memory::WritePolicy{"quarantine/v1",
                                               memory::SanitizePolicy::defaults()},
                     field_writer);
      }
    }

    if (halted) return;

    if (!episode_records.empty()) {
      auto compacted = memory::compact(episode_records, memory::episode_summarizer);
      if (std::holds_alternative<memory::MemoryRecord>(compacted)) {
        memory::MemoryRecord summary_record =
            std::get<memory::MemoryRecord>(std::move(compacted));
        log.append("memory", "Compacted",
                   json{{"summary_id", summary_record.id},
                        {"back_pointers", summary_record.back_pointers},
                        {"content_hash", summary_record.content_hash}});
        const std::string summary_id = summary_record.id;
        const auto corroborations = summary_record.corroborations;
        store->write(std::move(summary_record),
                     memory::WritePolicy{"compact-v1", memory::SanitizePolicy::defaults()},
                     kernel_writer);
        const assurance::Verifier against_sources{
            "summary-vs-sources", "1", [&episode_records](const json& subject) {
              std::vector<std::string> reasons;
              if (!subject.is_object() || !subject.contains("actions") ||
                  subject.at("actions").size() != episode_records.size()) {
                reasons.push_back("summary_incomplete");
              }
              return std::make_pair(reasons.empty(), reasons);
            }};
        const auto summary_verdict =
            assurance::verify(summary_id, store->find(summary_id)->content, {against_sources},
                              verdict_ids, &verdicts, &log);
        store->promote(summary_id, summary_verdict);
        if (corroborations.size() >= 2) {
          store->promote(summary_id, summary_verdict);
        }
      }
    }

    if (!summary.actions_taken.empty()) {
      log.append("harness", "Escalation",
                 json{{"target", config.supervisor.escalation_target},
                      {"reason", "reversible derate applied; operator asked to plan a "
                                 "service stop"}});
    }
    summary.why_stopped = {WhyStoppedCode::GoalSatisfied,
                           summary.actions_taken.empty() ? "monitor" : "mitigated"};
  }

  // ---------------------------------------------------------------------
  // Dialogue episode

  void run_dialogue() {
    if (!config.dialogue) {
      summary.why_stopped = {WhyStoppedCode::VerifierRejection, "no dialogue section in config"};
      return;
    }
    const DialogueScenario& scenario = *config.dialogue;
    std::map<std::string, contracts::CapabilityToken> role_tokens;
    for (const auto& grant : config.tokens) role_tokens[grant.role] = grant.token;

    protocol::DialogueEngine engine(scenario.roles, scenario.config, scenario.arbiter_role, &log,
                                    &clock, &registry, role_tokens, &verdicts);
    std::map<std::string, protocol::Agent> agents;
    for (const auto& [role, script] : scenario.scripts) {
      agents[role] = protocol::ScriptedAgent::from_document(script).fn(role);
    }
    const auto outcome = engine.run(agents, seed);
    log.append("protocol", "ConversationDag", engine.export_dag());
    summary.why_stopped = outcome.why_stopped;
  }
};

} // namespace

RunResult run_scenario(const ScenarioConfig& original, const RunOptions& options) {
  ScenarioConfig config = original;
  if (options.seed_override) config.seed = *options.seed_override;

  Kernel kernel(config, options);

  audit::TraceHeader header;
  header.episode_id = config.episode_id;
  header.seed = config.seed;
  header.config = to_document(config);
  header.config_hash = canonical_hash(header.config);
  header.tool_registry_hash = kernel.registry.registry_hash();
  header.policy_snapshot_hash = canonical_hash(assurance::to_document(config.supervisor));
  header.component_versions = component_versions();

  if (options.write_store && !options.playback) {
    kernel.store->attach_sink(
        (std::filesystem::path(options.output_dir) / (config.episode_id + ".store")).string());
  }

  kernel.log.append("harness", "EpisodeStarted",
                    json{{"episode_id", config.episode_id}, {"seed", config.seed},
                         {"kind", config.kind}});

  if (config.kind == "dialogue") {
    kernel.run_dialogue();
  } else {
    kernel.run_diagnosis();
  }

  for (const auto& event : kernel.log.events()) {
    if (event.kind == "Escalation") kernel.summary.escalations += 1;
  }
  kernel.log.append("harness", "WhyStopped", assurance::to_document(kernel.summary.why_stopped));
  kernel.summary.exit_code = exit_code_for(kernel.summary.why_stopped);

  RunResult result{audit::EpisodeTrace{std::move(header), kernel.log.events()},
                   std::move(kernel.summary)};
  if (options.write_trace && !options.playback) {
    audit::write_trace_file(result.trace,
                            (std::filesystem::path(options.output_dir) /
                             (config.episode_id + ".trace"))
                                .string());
  }
  return result;
}

audit::EpisodeTrace rerun_for_replay(const audit::EpisodeTrace& recorded) {
  const ScenarioConfig config = scenario_from_document(recorded.header.config);
  RunOptions options;
  options.playback = &recorded;
  return run_scenario(config, options).trace;
}

audit::ReplayReport replay_trace(const audit::EpisodeTrace& recorded) {
  return audit::replay(recorded, component_versions(), rerun_for_replay);
}

} // namespace agentkernel::harness
