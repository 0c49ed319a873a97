#include "agentkernel/audit.hpp"

#include <fstream>

namespace agentkernel::audit {

std::string chain_hash_of(const std::string& prev_hash, const std::string& payload_hash,
                          std::uint64_t seq) {
  return sha256_hex(prev_hash + payload_hash + std::to_string(seq));
}

const AuditEvent& AuditLog::append(std::string_view component, std::string_view kind,
                                   json payload) {
  AuditEvent event;
  event.seq = events_.size();
  event.tick = clock_ ? clock_->now() : 0;
  event.component = std::string(component);
  event.kind = std::string(kind);
  event.payload = std::move(payload);
  event.payload_hash = canonical_hash(event.payload);
  event.prev_hash = head_;
  event.chain_hash = chain_hash_of(event.prev_hash, event.payload_hash, event.seq);
  head_ = event.chain_hash;
  events_.push_back(std::move(event));
  return events_.back();
}

std::optional<ChainBreak> verify_chain(const std::vector<AuditEvent>& events) {
  std::string prev = zero_digest();
  for (std::size_t i = 0; i < events.size(); ++i) {
    const AuditEvent& event = events[i];
    if (event.seq != i) return ChainBreak{i, "seq"};
    if (event.prev_hash != prev) return ChainBreak{i, "prev_hash"};
    if (canonical_hash(event.payload) != event.payload_hash) {
      return ChainBreak{i, "payload_hash"};
    }
    if (chain_hash_of(event.prev_hash, event.payload_hash, event.seq) != event.chain_hash) {
      return ChainBreak{i, "chain_hash"};
    }
    prev = event.chain_hash;
  }
  return std::nullopt;
}

json to_document(const AuditEvent& event) {
  return json{{"seq", event.seq},
              {"tick", event.tick},
              {"component", event.component},
              {"kind", event.kind},
              {"payload", event.payload},
              {"payload_hash", event.payload_hash},
              {"prev_hash", event.prev_hash},
              {"chain_hash", event.chain_hash}};
}

AuditEvent event_from_document(const json& doc) {
  AuditEvent event;
  event.seq = doc.at("seq").get<std::uint64_t>();
  event.tick = doc.at("tick").get<Tick>();
  event.component = doc.at("component").get<std::string>();
  event.kind = doc.at("kind").get<std::string>();
  event.payload = doc.at("payload");
  event.payload_hash = doc.at("payload_hash").get<std::string>();
  event.prev_hash = doc.at("prev_hash").get<std::string>();
  event.chain_hash = doc.at("chain_hash").get<std::string>();
  return event;
}

json to_document(const TraceHeader& header) {
  return json{{"episode_id", header.episode_id},
              {"seed", header.seed},
              {"hash_function", header.hash_function},
              {"config_hash", header.config_hash},
              {"tool_registry_hash", header.tool_registry_hash},
              {"policy_snapshot_hash", header.policy_snapshot_hash},
              {"component_versions", header.component_versions},
              {"config", header.config}};
}

TraceHeader header_from_document(const json& doc) {
  TraceHeader header;
  header.episode_id = doc.at("episode_id").get<std::string>();
  header.seed = doc.at("seed").get<std::uint64_t>();
  header.hash_function = doc.at("hash_function").get<std::string>();
  header.config_hash = doc.at("config_hash").get<std::string>();
  header.tool_registry_hash = doc.at("tool_registry_hash").get<std::string>();
  header.policy_snapshot_hash = doc.at("policy_snapshot_hash").get<std::string>();
  header.component_versions =
      doc.at("component_versions").get<std::map<std::string, std::string>>();
  header.config = doc.at("config");
  return header;
}

void write_trace_file(const EpisodeTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
  out << canonical_dump(to_document(trace.header)) << '\n';
  for (const auto& event : trace.events) {
    out << canonical_dump(to_document(event)) << '\n';
  }
  if (!out) throw std::runtime_error("short write on trace file: " + path);
}

EpisodeTrace read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  EpisodeTrace trace;
  std::string line;
  if (!std::getline(in, line)) {
    throw ReplayError(ReplayError::Code::MalformedTrace, "empty trace file: " + path);
  }
  trace.header = header_from_document(json::parse(line));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    trace.events.push_back(event_from_document(json::parse(line)));
  }
  return trace;
}

ReplayReport compare_traces(const EpisodeTrace& recorded, const EpisodeTrace& regenerated) {
  ReplayReport report;
  const std::size_t n = std::min(recorded.events.size(), regenerated.events.size());
  for (std::size_t i = 0; i < n; ++i) {
    const AuditEvent& want = recorded.events[i];
    const AuditEvent& got = regenerated.events[i];
    ++report.events_compared;
    std::string field;
    const std::string got_hash = canonical_hash(got.payload);
    if (want.tick != got.tick) field = "tick";
    else if (want.component != got.component) field = "component";
    else if (want.kind != got.kind) field = "kind";
    // Divergence when the regenerated payload differs from either the
    // recorded hash or the recorded content (an edit to one without the
    // other is still an edit).
    else if (got_hash != want.payload_hash || got_hash != canonical_hash(want.payload)) {
      field = "payload_hash";
    }
    if (!field.empty()) {
      report.first_divergence =
          Divergence{want.seq, field, want.payload_hash, got_hash, got.component};
      return report;
    }
  }
  if (recorded.events.size() != regenerated.events.size()) {
    const bool truncated = regenerated.events.size() < recorded.events.size();
    const std::uint64_t seq = static_cast<std::uint64_t>(n);
    const std::string component =
        truncated ? recorded.events[n].component : regenerated.events[n].component;
    report.first_divergence =
        Divergence{seq, truncated ? "missing_event" : "extra_event",
                   truncated ? recorded.events[n].payload_hash : std::string{},
                   truncated ? std::string{} : regenerated.events[n].payload_hash, component};
    return report;
  }
  report.identical = true;
  return report;
}

ReplayReport replay(const EpisodeTrace& recorded,
                    const std::map<std::string, std::string>& current_versions,
                    const EpisodeRerun& rerun) {
  if (recorded.header.hash_function != kHashFunctionId) {
    throw ReplayError(ReplayError::Code::UnsupportedHashFunction,
                      "trace hashed with unsupported function: " + recorded.header.hash_function);
  }
  if (recorded.header.component_versions != current_versions) {
    throw ReplayError(ReplayError::Code::VersionMismatch,
                      "component versions in trace do not match this build");
  }
  const EpisodeTrace regenerated = rerun(recorded);
  return compare_traces(recorded, regenerated);
}

} // namespace agentkernel::audit
