#pragma once

#include "agentkernel/assurance.hpp"
#include "agentkernel/audit.hpp"
#include "agentkernel/canonical.hpp"
#include "agentkernel/clock.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace agentkernel::memory {

enum class Tier { Untrusted = 0, Silver = 1, Gold = 2 };
std::string_view to_string(Tier tier);
Tier tier_from_string(std::string_view text);

enum class RecordStatus { Draft, Verified, Published };
std::string_view to_string(RecordStatus status);
RecordStatus status_from_string(std::string_view text);

// ---------------------------------------------------------------------------
// Sanitization

struct SanitizeFlag {
  std::string pattern;
  std::size_t offset = 0; // byte offset in the original content
  std::size_t length = 0;
  std::string list; // "control" or "deny"
};

json to_document(const SanitizeFlag& flag);
SanitizeFlag sanitize_flag_from_document(const json& doc);

struct SanitizePolicy {
  std::vector<std::string> control_tokens;
  std::vector<std::string> deny_patterns;

  /// Common model-control token spellings. Patterns must never match the
  /// replacement marker, or idempotence breaks.
  static SanitizePolicy defaults();
};

json to_document(const SanitizePolicy& policy);
SanitizePolicy sanitize_policy_from_document(const json& doc);

inline constexpr std::string_view kSanitizeMarker = "[[stripped]]";

struct SanitizeResult {
  std::string clean;
  std::vector<SanitizeFlag> flags;
};

/// Replaces every occurrence of a configured pattern with the marker, one
/// flag per removal with byte offsets into the input. Idempotent:
/// sanitize(sanitize(x)) == sanitize(x).
SanitizeResult sanitize(std::string_view content, const SanitizePolicy& policy);

// ---------------------------------------------------------------------------
// Records

struct MemoryRecord {
  std::string id;
  std::uint64_t version = 0;
  json content;
  std::string source_uri;
  std::string content_hash;
  std::string policy_id;
  Tick created_at = 0;
  Tier tier = Tier::Untrusted;
  RecordStatus status = RecordStatus::Draft;
  std::map<std::string, json> validity; // condition key -> required value
  std::optional<Tick> ttl;
  std::vector<std::string> back_pointers; // summaries point at their inputs
  std::set<std::string> corroborations;   // distinct source uris
  std::vector<SanitizeFlag> sanitize_flags;
  std::optional<std::string> verdict_flag; // set when a promotion gate failed
};

json to_document(const MemoryRecord& record);
MemoryRecord record_from_document(const json& doc);

struct RetrievalPolicy {
  std::string policy_id;
  std::size_t top_k = 1;
  std::map<Tier, std::uint64_t> tier_weights{{Tier::Gold, 4}, {Tier::Silver, 2},
                                             {Tier::Untrusted, 1}};
  Tick recency_half_life = 64;
  bool require_citation = false;
  std::map<std::string, json> context; // current values for validity matching
};

json to_document(const RetrievalPolicy& policy);
RetrievalPolicy retrieval_policy_from_document(const json& doc);

struct ScoredItem {
  MemoryRecord record;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<ScoredItem> items; // scores non-increasing
  std::string policy_id;
};

enum class MemoryErrorCode {
  CapabilityDenied,
  HashMismatch,
  UnknownKey,
  EmptyInput,
  VerdictFailed,
  InsufficientCorroboration,
  MalformedPolicy,
};
std::string_view to_string(MemoryErrorCode code);

struct MemoryError {
  MemoryErrorCode code = MemoryErrorCode::UnknownKey;
  std::string detail;
};

struct WriterCapability {
  std::string writer_id;
  bool curated = false; // uncurated writers are quarantined to Untrusted
};

struct WritePolicy {
  std::string policy_id = "write-default";
  SanitizePolicy sanitize = SanitizePolicy::defaults();
};

// Scoring pieces, exposed for the re-filter oracle in tests.
std::vector<std::string> tokenize(std::string_view text);
double lexical_overlap(std::string_view query, const json& content);
/// 1/2^(age/half_life) with integer tick arithmetic; exact in binary floating
/// point, so ranking never drifts across platforms.
double recency_decay(Tick age, Tick half_life);

// ---------------------------------------------------------------------------
// Working set

struct WorkingSetEntry {
  std::string id;
  double priority = 0.0;
  Tick last_access = 0;
  std::uint64_t access_count = 0;
};

struct WorkingSet {
  std::size_t capacity = 0;
  std::vector<WorkingSetEntry> entries;

  const WorkingSetEntry* find(const std::string& id) const;
};

// ---------------------------------------------------------------------------
// Store

/// Versioned record store. Snapshot-isolated reads (retrieval copies the
/// matched records); writes and promotions are serialized by the owning
/// kernel thread.
class MemoryStore {
public:
  MemoryStore(audit::AuditLog* log = nullptr, const LogicalClock* clock = nullptr)
      : log_(log), clock_(clock) {}

  struct WriteReceipt {
    std::string id;
    std::uint64_t version = 0;
  };

  /// Stores the record as Draft. Uncurated writers may only write Untrusted;
  /// Untrusted content is sanitized before it is stored, flags retained.
  /// Rewrites of an existing id bump the version.
  std::variant<WriteReceipt, MemoryError> write(MemoryRecord record, const WritePolicy& policy,
                                                const WriterCapability& writer);

  /// Draft -> Verified on a passing verdict; Verified -> Published only with
  /// corroboration from at least two distinct sources.
  std::variant<MemoryRecord, MemoryError> promote(const std::string& id,
                                                  const assurance::Verdict& verdict);

  /// score = lexical_overlap * tier_weight * recency_decay. Records failing
  /// ttl or validity-vs-context are excluded. Ties break by (tier desc,
  /// created_at desc, id asc).
  std::variant<RetrievalResult, MemoryError> retrieve(std::string_view query,
                                                      const RetrievalPolicy& policy,
                                                      Tick now) const;

  std::variant<WorkingSet, MemoryError> page_in(const std::vector<std::string>& keys,
                                                WorkingSet ws, Tick now) const;
  std::variant<WorkingSet, MemoryError> evict(const std::vector<std::string>& keys,
                                              const std::string& reason, WorkingSet ws) const;

  const MemoryRecord* find(const std::string& id) const;
  std::vector<const MemoryRecord*> all() const;
  std::size_t size() const { return records_.size(); }

  /// Append-only persistence: every accepted write/promote emits one
  /// canonical document line.
  void attach_sink(const std::string& path);
  static MemoryStore load_file(const std::string& path, audit::AuditLog* log = nullptr,
                               const LogicalClock* clock = nullptr);

private:
  void persist(const MemoryRecord& record);

  audit::AuditLog* log_;
  const LogicalClock* clock_;
  std::map<std::string, MemoryRecord> records_;
  std::string sink_path_;
};

/// Deterministic reducer signature for compaction (task -> actions ->
/// outcomes shape by convention).
using Summarizer = std::function<json(const std::vector<MemoryRecord>&)>;

/// Folds episode records into one summary record. The summary id and content
/// hash are functions of the input content hashes alone, so compaction is
/// bit-idempotent. The summary enters as Draft and must pass the usual
/// promotion gates.
std::variant<MemoryRecord, MemoryError> compact(const std::vector<MemoryRecord>& inputs,
                                                const Summarizer& summarizer);

/// Reference reducer used by the harness.
json episode_summarizer(const std::vector<MemoryRecord>& inputs);

} // namespace agentkernel::memory
