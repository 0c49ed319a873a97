#pragma once

#include "agentkernel/canonical.hpp"
#include "agentkernel/clock.hpp"

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace agentkernel::audit {

/// One sealed entry of the append-only episode log.
/// chain_hash = H(prev_hash ++ payload_hash ++ decimal(seq)), hashes as
/// lowercase hex, so each event commits to its whole prefix.
struct AuditEvent {
  std::uint64_t seq = 0;
  Tick tick = 0;
  std::string component;
  std::string kind;
  json payload;
  std::string payload_hash;
  std::string prev_hash;
  std::string chain_hash;
};

json to_document(const AuditEvent& event);
AuditEvent event_from_document(const json& doc);

std::string chain_hash_of(const std::string& prev_hash, const std::string& payload_hash,
                          std::uint64_t seq);

/// Single-appender log. Producers hand payloads to the owner thread; events
/// are never mutated or removed once sealed.
class AuditLog {
public:
  explicit AuditLog(const LogicalClock* clock = nullptr) : clock_(clock) {}

  const AuditEvent& append(std::string_view component, std::string_view kind, json payload);

  const std::vector<AuditEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  const std::string& head_hash() const { return head_; }

private:
  const LogicalClock* clock_;
  std::vector<AuditEvent> events_;
  std::string head_ = zero_digest();
};

struct ChainBreak {
  std::uint64_t first_bad_seq = 0;
  std::string field; // which recomputation failed
};

/// Recomputes every payload and chain hash. nullopt == intact.
std::optional<ChainBreak> verify_chain(const std::vector<AuditEvent>& events);

struct TraceHeader {
  std::string episode_id;
  std::uint64_t seed = 0;
  std::string hash_function{kHashFunctionId};
  std::string config_hash;
  std::string tool_registry_hash;
  std::string policy_snapshot_hash;
  std::map<std::string, std::string> component_versions;
  json config; // embedded scenario document; replay re-runs from it
};

json to_document(const TraceHeader& header);
TraceHeader header_from_document(const json& doc);

struct EpisodeTrace {
  TraceHeader header;
  std::vector<AuditEvent> events;
};

/// Trace file: header document on line one, one canonical event document per
/// line after it. Streaming-friendly.
void write_trace_file(const EpisodeTrace& trace, const std::string& path);
EpisodeTrace read_trace_file(const std::string& path);

struct Divergence {
  std::uint64_t seq = 0;
  std::string field;
  std::string expected_hash;
  std::string actual_hash;
  std::string component; // fault attribution: who emitted the diverging event
};

struct ReplayReport {
  bool identical = false;
  std::optional<Divergence> first_divergence;
  std::uint64_t events_compared = 0;
};

class ReplayError : public std::runtime_error {
public:
  enum class Code { VersionMismatch, TruncatedTrace, UnsupportedHashFunction, MalformedTrace };

  ReplayError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

private:
  Code code_;
};

/// Re-runs the recorded episode through `rerun` (the kernel factory: same
/// wiring, adapters replaced by playback stubs) and compares the regenerated
/// event stream against the recorded one, hash by hash.
/// Throws ReplayError on header guards (hash function, component versions).
using EpisodeRerun = std::function<EpisodeTrace(const EpisodeTrace& recorded)>;
ReplayReport replay(const EpisodeTrace& recorded,
                    const std::map<std::string, std::string>& current_versions,
                    const EpisodeRerun& rerun);

/// The comparison half of replay, exposed for tests.
ReplayReport compare_traces(const EpisodeTrace& recorded, const EpisodeTrace& regenerated);

} // namespace agentkernel::audit
