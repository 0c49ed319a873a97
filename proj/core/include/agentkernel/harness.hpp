#pragma once

#include "agentkernel/assurance.hpp"
#include "agentkernel/audit.hpp"
#include "agentkernel/contracts.hpp"
#include "agentkernel/gateway.hpp"
#include "agentkernel/memory.hpp"
#include "agentkernel/planner.hpp"
#include "agentkernel/protocol.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace agentkernel::harness {

enum class FaultMode { SchemaMismatch, TransientFlake, MissingData, PermanentFailure };
std::string_view to_string(FaultMode mode);
FaultMode fault_mode_from_string(std::string_view text);

struct FaultInjection {
  std::string target_tool;
  FaultMode mode = FaultMode::TransientFlake;
  std::uint64_t at_call_index = 0; // per-tool invocation (or call) counter
};

json to_document(const FaultInjection& fault);
FaultInjection fault_from_document(const json& doc);
/// Compact form "tool:mode:index" accepted on the command line.
FaultInjection fault_from_spec(const std::string& spec);

struct TokenGrant {
  std::string role;
  contracts::CapabilityToken token;
};

struct DialogueScenario {
  protocol::DialogueConfig config;
  std::vector<protocol::RoleDescriptor> roles;
  std::string arbiter_role;
  std::map<std::string, json> scripts; // role -> inline script document
};

/// One episode's complete input. Fixture documents are inlined (loading from
/// a file resolves any {"path": ...} references), so a config embedded in a
/// trace header is self-contained for replay.
struct ScenarioConfig {
  std::string episode_id = "episode";
  std::uint64_t seed = 0;
  std::string kind = "diagnosis"; // "diagnosis" | "dialogue"
  std::string vehicle_id = "V-17";
  assurance::Budget budget;
  assurance::SupervisorPolicy supervisor;
  double derate_risk_threshold = 0.5; // actuation branch taken above this
  double derate_fraction = 0.3;
  std::vector<TokenGrant> tokens;
  json fixtures = json::object(); // telemetry, firmware, risk_table, knowledge
  std::vector<FaultInjection> faults;
  bool interactive = false;
  std::optional<DialogueScenario> dialogue;
};

json to_document(const ScenarioConfig& config);
ScenarioConfig scenario_from_document(const json& doc);
/// Loads a config file and inlines every {"path": ...} fixture or script
/// reference relative to the config's directory.
ScenarioConfig scenario_from_file(const std::string& path);

/// Registers the mock tool contracts: telemetry_query, firmware_status,
/// twin_simulate, derate_command, restore_command, schedule_service,
/// cancel_service, calc.
contracts::ToolRegistry mock_tool_registry();

/// Baseline capability token used when the config carries no explicit grant
/// for the executor role.
contracts::CapabilityToken default_executor_token();

/// Installs deterministic fixture-backed adapters, wrapped with the config's
/// fault injections.
void register_mock_adapters(gateway::Gateway& gw, const ScenarioConfig& config);

/// The fixed diagnosis plan: E1 telemetry -> E2 twin simulation (bound from
/// E1 thermal features) -> conditional E3 derate + E4 service ticket when the
/// simulated risk exceeds the configured threshold.
planner::Plan diagnosis_plan(const ScenarioConfig& config);

struct ExitSummary {
  assurance::WhyStopped why_stopped;
  std::vector<std::string> actions_taken; // actuating tool invocations that succeeded
  std::uint64_t escalations = 0;
  int exit_code = 0;
};

json to_document(const ExitSummary& summary);

struct RunResult {
  audit::EpisodeTrace trace;
  ExitSummary summary;
};

struct RunOptions {
  bool write_trace = false;
  bool write_store = false;
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed_override;
  std::optional<bool> approval; // dual-control answer for irreversible calls
  /// When set, adapters, dialogue agents and approvals are played back from
  /// this recorded trace instead of fixtures; nothing is persisted.
  const audit::EpisodeTrace* playback = nullptr;
};

/// Runs one episode end to end and returns the sealed trace plus summary.
RunResult run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

/// Appends a fault after checking the tool exists; throws std::invalid_argument
/// on unknown tools.
ScenarioConfig inject(ScenarioConfig config, FaultInjection fault);

/// Kernel factory for audit::replay: re-runs the embedded config with
/// playback stubs.
audit::EpisodeTrace rerun_for_replay(const audit::EpisodeTrace& recorded);

/// Full replay guard + comparison for a recorded trace.
audit::ReplayReport replay_trace(const audit::EpisodeTrace& recorded);

/// Exit code families: 0 goal_satisfied/consensus, 10 budget, 20 safety,
/// 30 verifier_rejection, 40 non-convergence/deadlock, 50 search codes.
int exit_code_for(const assurance::WhyStopped& why);

inline constexpr int kExitUsage = 64;
inline constexpr int kExitBadData = 65;
inline constexpr int kExitNoInput = 66;

/// Subcommands: run, replay, verify, inject, dialogue. Flags: --seed N,
/// --non-interactive, --out DIR/FILE, --approve.
int cli(const std::vector<std::string>& args);

} // namespace agentkernel::harness
