#include "agentkernel/harness.hpp"
#include "agentkernel/version.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace agentkernel::harness {

namespace {

constexpr std::string_view kUsage = R"(akctl - deterministic agent episode runner

usage:
  akctl run <config.json>       run a scenario; writes <episode_id>.trace
  akctl replay <trace>          re-run a trace against playback stubs
  akctl verify <trace>          recompute and check the audit hash chain
  akctl inject <config> <spec>  append a fault (tool:mode[:index]) to a config
  akctl dialogue <config.json>  run the scripted dialogue scenario

options:
  --seed N            override the config seed
  --out PATH          output directory (run/dialogue) or file (inject)
  --non-interactive   auto-deny operator approvals
  --approve           auto-grant operator approvals
  --store             also persist the memory store file
  --config PATH       (replay) config file that must match the trace header
  -h, --help          this text

exit codes: 0 goal satisfied / consensus / intact; 1 divergence or broken
chain; 10 budget stop; 20 safety halt; 30 verifier rejection;
40 non-convergence / deadlock; 64 usage; 65 bad data; 66 missing input.
)";

struct CliOptions {
  std::vector<std::string> positional;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool out_set = false;
  std::optional<bool> approval;
  bool store = false;
  std::optional<std::string> config_override;
  bool help = false;
};

std::optional<CliOptions> parse(const std::vector<std::string>& args) {
  CliOptions options;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg == "-h" || arg == "--help") {
      options.help = true;
    } else if (arg == "--seed") {
      if (++i >= args.size()) return std::nullopt;
      options.seed = std::stoull(args[i]);
    } else if (arg == "--out") {
      if (++i >= args.size()) return std::nullopt;
      options.out = args[i];
      options.out_set = true;
    } else if (arg == "--non-interactive") {
      options.approval = false;
    } else if (arg == "--approve") {
      options.approval = true;
    } else if (arg == "--store") {
      options.store = true;
    } else if (arg == "--config") {
      if (++i >= args.size()) return std::nullopt;
      options.config_override = args[i];
    } else if (!arg.empty() && arg[0] == '-') {
      return std::nullopt;
    } else {
      options.positional.push_back(arg);
    }
  }
  return options;
}

int cmd_run(const CliOptions& options, bool force_dialogue) {
  ScenarioConfig config = scenario_from_file(options.positional.at(1));
  if (force_dialogue) config.kind = "dialogue";
  RunOptions run_options;
  run_options.write_trace = true;
  run_options.write_store = options.store;
  run_options.output_dir = options.out;
  run_options.seed_override = options.seed;
  run_options.approval = options.approval;
  const RunResult result = run_scenario(config, run_options);

  if (force_dialogue) {
    for (const auto& event : result.trace.events) {
      if (event.kind == "ConversationDag") {
        const auto path = std::filesystem::path(options.out) /
                          (result.trace.header.episode_id + ".dag.json");
        std::ofstream dag(path, std::ios::binary | std::ios::trunc);
        dag << canonical_dump(event.payload) << '\n';
        break;
      }
    }
  }
  std::cout << "episode " << result.trace.header.episode_id << " stopped: "
            << assurance::to_string(result.summary.why_stopped.code)
            << (result.summary.why_stopped.detail.empty()
                    ? ""
                    : " (" + result.summary.why_stopped.detail + ")")
            << "\n";
  std::cout << "actions:";
  for (const auto& action : result.summary.actions_taken) std::cout << " " << action;
  std::cout << "\nescalations: " << result.summary.escalations << "\ntrace: "
            << (std::filesystem::path(options.out) /
                (result.trace.header.episode_id + ".trace"))
                   .string()
            << "\n";
  return result.summary.exit_code;
}

int cmd_verify(const CliOptions& options) {
  const auto trace = audit::read_trace_file(options.positional.at(1));
  const auto broken = audit::verify_chain(trace.events);
  if (!broken) {
    std::cout << "chain intact: " << trace.events.size() << " events\n";
    return 0;
  }
  std::cout << "chain broken at seq " << broken->first_bad_seq << " (" << broken->field << ")\n";
  return 1;
}

int cmd_replay(const CliOptions& options) {
  const auto trace = audit::read_trace_file(options.positional.at(1));
  if (options.config_override) {
    const ScenarioConfig override_config = scenario_from_file(*options.config_override);
    if (canonical_hash(to_document(override_config)) != trace.header.config_hash) {
      std::cout << "version mismatch: supplied config does not match the trace's config hash\n";
      return kExitBadData;
    }
  }
  try {
    const auto report = replay_trace(trace);
    if (report.identical) {
      std::cout << "replay identical: " << report.events_compared << " events\n";
      return 0;
    }
    const auto& d = *report.first_divergence;
    std::cout << "replay diverged at seq " << d.seq << " field " << d.field << " component "
              << d.component << "\n  expected " << d.expected_hash << "\n  actual   "
              << d.actual_hash << "\n";
    return 1;
  } catch (const audit::ReplayError& e) {
    std::cout << "replay refused: " << e.what() << "\n";
    return kExitBadData;
  }
}

int cmd_inject(const CliOptions& options) {
  const ScenarioConfig config = scenario_from_file(options.positional.at(1));
  const FaultInjection fault = fault_from_spec(options.positional.at(2));
  const ScenarioConfig updated = inject(config, fault);
  const std::string text = canonical_dump(to_document(updated));
  if (options.out_set) {
    std::ofstream out(options.out, std::ios::binary | std::ios::trunc);
    if (!out) {
      std::cerr << "cannot write " << options.out << "\n";
      return kExitBadData;
    }
    out << text << '\n';
  } else {
    std::cout << text << "\n";
  }
  return 0;
}

} // namespace

int cli(const std::vector<std::string>& args) {
  const auto options = parse(args);
  if (!options) {
    std::cerr << kUsage;
    return kExitUsage;
  }
  if (options->help || options->positional.empty()) {
    std::cout << kUsage;
    return options->help ? 0 : kExitUsage;
  }
  const std::string& command = options->positional.front();
  const std::size_t need = command == "inject" ? 3 : 2;
  if (options->positional.size() != need) {
    std::cerr << kUsage;
    return kExitUsage;
  }
  try {
    if (command == "run") return cmd_run(*options, false);
    if (command == "dialogue") return cmd_run(*options, true);
    if (command == "verify") return cmd_verify(*options);
    if (command == "replay") return cmd_replay(*options);
    if (command == "inject") return cmd_inject(*options);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadData;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed document: " << e.what() << "\n";
    return kExitBadData;
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    return what.find("cannot open") != std::string::npos ? kExitNoInput : kExitBadData;
  }
  std::cerr << kUsage;
  return kExitUsage;
}

} // namespace agentkernel::harness
