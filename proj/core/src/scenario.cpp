#include "agentkernel/harness.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace agentkernel::harness {

std::string_view to_string(FaultMode mode) {
  switch (mode) {
  case FaultMode::SchemaMismatch: return "schema_mismatch";
  case FaultMode::TransientFlake: return "transient_flake";
  case FaultMode::MissingData: return "missing_data";
  case FaultMode::PermanentFailure: return "permanent_failure";
  }
  return "transient_flake";
}

FaultMode fault_mode_from_string(std::string_view text) {
  if (text == "schema_mismatch") return FaultMode::SchemaMismatch;
  if (text == "transient_flake") return FaultMode::TransientFlake;
  if (text == "missing_data") return FaultMode::MissingData;
  if (text == "permanent_failure") return FaultMode::PermanentFailure;
  throw std::invalid_argument("unknown fault mode: " + std::string(text));
}

json to_document(const FaultInjection& fault) {
  return json{{"target_tool", fault.target_tool},
              {"mode", std::string(to_string(fault.mode))},
              {"at_call_index", fault.at_call_index}};
}

FaultInjection fault_from_document(const json& doc) {
  FaultInjection fault;
  fault.target_tool = doc.at("target_tool").get<std::string>();
  fault.mode = fault_mode_from_string(doc.at("mode").get<std::string>());
  fault.at_call_index = doc.value("at_call_index", std::uint64_t{0});
  return fault;
}

FaultInjection fault_from_spec(const std::string& spec) {
  const std::size_t first = spec.find(':');
  if (first == std::string::npos) {
    throw std::invalid_argument("fault spec must be tool:mode[:index], got " + spec);
  }
  const std::size_t second = spec.find(':', first + 1);
  FaultInjection fault;
  fault.target_tool = spec.substr(0, first);
  fault.mode = fault_mode_from_string(
      second == std::string::npos ? spec.substr(first + 1)
                                  : spec.substr(first + 1, second - first - 1));
  if (second != std::string::npos) {
    fault.at_call_index = std::stoull(spec.substr(second + 1));
  }
  return fault;
}

// ---------------------------------------------------------------------------
// Scenario config serialization

json to_document(const ScenarioConfig& config) {
  json tokens = json::array();
  for (const auto& grant : config.tokens) {
    tokens.push_back(
        json{{"role", grant.role}, {"token", contracts::to_document(grant.token)}});
  }
  json faults = json::array();
  for (const auto& fault : config.faults) faults.push_back(to_document(fault));

  json doc{{"episode_id", config.episode_id},
           {"seed", config.seed},
           {"kind", config.kind},
           {"vehicle_id", config.vehicle_id},
           {"budget", assurance::to_document(config.budget)},
           {"supervisor", assurance::to_document(config.supervisor)},
           {"derate_risk_threshold", config.derate_risk_threshold},
           {"derate_fraction", config.derate_fraction},
           {"tokens", std::move(tokens)},
           {"fixtures", config.fixtures},
           {"faults", std::move(faults)},
           {"interactive", config.interactive}};
  if (config.dialogue) {
    json roles = json::array();
    for (const auto& role : config.dialogue->roles) {
      roles.push_back(protocol::to_document(role));
    }
    doc["dialogue"] = json{{"config", protocol::to_document(config.dialogue->config)},
                           {"roles", std::move(roles)},
                           {"arbiter_role", config.dialogue->arbiter_role},
                           {"scripts", config.dialogue->scripts}};
  }
  return doc;
}

ScenarioConfig scenario_from_document(const json& doc) {
  ScenarioConfig config;
  config.episode_id = doc.value("episode_id", std::string{"episode"});
  config.seed = doc.value("seed", std::uint64_t{0});
  config.kind = doc.value("kind", std::string{"diagnosis"});
  config.vehicle_id = doc.value("vehicle_id", std::string{"V-17"});
  if (doc.contains("budget")) config.budget = assurance::budget_from_document(doc.at("budget"));
  if (doc.contains("supervisor")) {
    config.supervisor = assurance::supervisor_policy_from_document(doc.at("supervisor"));
  }
  config.derate_risk_threshold = doc.value("derate_risk_threshold", 0.5);
  config.derate_fraction = doc.value("derate_fraction", 0.3);
  if (doc.contains("tokens")) {
    for (const auto& grant : doc.at("tokens")) {
      config.tokens.push_back(
          {grant.at("role").get<std::string>(), contracts::token_from_document(grant.at("token"))});
    }
  }
  config.fixtures = doc.value("fixtures", json::object());
  if (doc.contains("faults")) {
    for (const auto& fault : doc.at("faults")) {
      config.faults.push_back(fault_from_document(fault));
    }
  }
  config.interactive = doc.value("interactive", false);
  if (doc.contains("dialogue")) {
    const json& d = doc.at("dialogue");
    DialogueScenario dialogue;
    if (d.contains("config")) {
      dialogue.config = protocol::dialogue_config_from_document(d.at("config"));
    }
    for (const auto& role : d.value("roles", json::array())) {
      dialogue.roles.push_back(protocol::role_from_document(role));
    }
    dialogue.arbiter_role = d.value("arbiter_role", std::string{});
    if (d.contains("scripts")) {
      for (auto it = d.at("scripts").begin(); it != d.at("scripts").end(); ++it) {
        dialogue.scripts[it.key()] = it.value();
      }
    }
    config.dialogue = std::move(dialogue);
  }
  return config;
}

namespace {

// Replaces {"path": "relative/file.json"} references with the parsed file
// content so the config document is self-contained.
json inline_path_refs(const json& value, const std::filesystem::path& base) {
  if (value.is_object()) {
    if (value.size() == 1 && value.contains("path") && value.at("path").is_string()) {
      const auto path = base / value.at("path").get<std::string>();
      std::ifstream in(path);
      if (!in) throw std::runtime_error("cannot open fixture file: " + path.string());
      return json::parse(in);
    }
    json out = json::object();
    for (auto it = value.begin(); it != value.end(); ++it) {
      out[it.key()] = inline_path_refs(it.value(), base);
    }
    return out;
  }
  if (value.is_array()) {
    json out = json::array();
    for (const auto& item : value) out.push_back(inline_path_refs(item, base));
    return out;
  }
  return value;
}

} // namespace

ScenarioConfig scenario_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario config: " + path);
  const json raw = json::parse(in);
  const auto base = std::filesystem::path(path).parent_path();
  return scenario_from_document(inline_path_refs(raw, base));
}

ScenarioConfig inject(ScenarioConfig config, FaultInjection fault) {
  const auto registry = mock_tool_registry();
  if (registry.find_any(fault.target_tool) == nullptr) {
    throw std::invalid_argument("fault targets unknown tool: " + fault.target_tool);
  }
  config.faults.push_back(std::move(fault));
  return config;
}

json to_document(const ExitSummary& summary) {
  return json{{"why_stopped", assurance::to_document(summary.why_stopped)},
              {"actions_taken", summary.actions_taken},
              {"escalations", summary.escalations},
              {"exit_code", summary.exit_code}};
}

int exit_code_for(const assurance::WhyStopped& why) {
  using assurance::WhyStoppedCode;
  switch (why.code) {
  case WhyStoppedCode::GoalSatisfied:
  case WhyStoppedCode::ConsensusReached:
    return 0;
  case WhyStoppedCode::BudgetExceeded:
  case WhyStoppedCode::BudgetExhausted:
    return 10;
  case WhyStoppedCode::SafetyHalt:
  case WhyStoppedCode::OperatorAbort:
    return 20;
  case WhyStoppedCode::VerifierRejection:
    return 30;
  case WhyStoppedCode::NonConvergence:
  case WhyStoppedCode::Deadlock:
    return 40;
  case WhyStoppedCode::Convergence:
  case WhyStoppedCode::Contradiction:
    return 50;
  }
  return 50;
}

} // namespace agentkernel::harness
