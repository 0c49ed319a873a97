#pragma once

#include "agentkernel/canonical.hpp"
#include "agentkernel/clock.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace agentkernel::contracts {

/// Authority levels, totally ordered. The ordering is the "scope ceiling"
/// comparison used by authorization, plan checking and the supervisor.
enum class ToolScope { ReadOnly = 0, Simulate = 1, ActuateReversible = 2, ActuateIrreversible = 3 };

/// Total order with ReadOnly minimal: a <= b.
bool scope_leq(ToolScope a, ToolScope b);

std::string_view to_string(ToolScope scope);
ToolScope scope_from_string(std::string_view text);

enum class FieldKind { Text, Integer, Decimal, Boolean, Enumeration, Document, List };
std::string_view to_string(FieldKind kind);
FieldKind field_kind_from_string(std::string_view text);

/// One argument field. Document fields carry their subfields in `children`;
/// List fields carry exactly one child describing the element shape.
struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::Text;
  bool required = true;
  std::optional<double> min;               // numeric kinds, inclusive
  std::optional<double> max;               // numeric kinds, inclusive
  std::vector<json> allowed;               // Enumeration values
  std::optional<std::size_t> max_length;   // Text, in bytes
  std::vector<FieldSchema> children;
};

/// Structural problems in a schema definition (min > max, empty enumeration,
/// childless nested kinds, duplicate sibling names). Empty == well-formed.
std::vector<std::string> schema_problems(const std::vector<FieldSchema>& fields);

struct RateLimit {
  std::uint64_t max_calls = 0; // 0 = unlimited
  Tick window = 0;
};

struct ToolSpec {
  std::string name;
  std::string version;
  ToolScope scope = ToolScope::ReadOnly;
  std::vector<FieldSchema> arg_schema;
  Tick timeout = 0; // logical ticks; 0 = no timeout
  RateLimit rate_limit;
  bool requires_idempotency_key = false;
  std::set<std::string> transient_error_codes;
};

json to_document(const FieldSchema& field);
FieldSchema field_schema_from_document(const json& doc);
json to_document(const ToolSpec& spec);
ToolSpec tool_spec_from_document(const json& doc);

/// Upper bound on one argument: a numeric ceiling, an admissible value set,
/// or both (either failing rejects the call).
struct ParameterCap {
  std::optional<double> max_value;
  std::vector<json> allowed;
};

/// Least-privilege grant. Value-immutable after issuance; the kernel tracks
/// consumption through the updated copy returned inside each Permit.
struct CapabilityToken {
  std::string token_id;
  std::string subject;
  std::vector<std::string> tool_allowlist; // exact name or trailing '*' prefix pattern
  ToolScope scope_ceiling = ToolScope::ReadOnly;
  std::map<std::string, ParameterCap> parameter_caps; // arg path -> cap
  Tick expiry = 0;
  std::uint64_t max_invocations = 0;
  std::uint64_t invocations_used = 0;
};

json to_document(const CapabilityToken& token);
CapabilityToken token_from_document(const json& doc);

/// True when any pattern matches: exact, or prefix for patterns ending '*'.
bool allowlist_matches(const std::vector<std::string>& patterns, std::string_view tool_name);

struct ToolCall {
  std::string call_id;
  std::string tool_name;
  std::string tool_version;
  json args = json::object();
  std::optional<std::string> idempotency_key;
  std::string issuer;
  std::optional<std::string> origin_step;     // plan step this call realizes
  std::optional<std::string> sim_verdict_ref; // prior simulation verdict id
};

json to_document(const ToolCall& call);
ToolCall call_from_document(const json& doc);

/// Digest of canonical {tool_name, tool_version, args}; the identity used by
/// idempotent deduplication.
std::string call_fingerprint(const ToolCall& call);

enum class ValidationCode {
  UnknownTool,
  UnknownField,
  MissingField,
  TypeMismatch,
  OutOfRange,
  NotInEnumeration,
  ScopeExceeded,
  CapExceeded,
  TokenExpired,
  TokenExhausted,
  ToolNotAllowlisted,
  MissingIdempotencyKey,
};
std::string_view to_string(ValidationCode code);

struct ValidationError {
  ValidationCode code = ValidationCode::UnknownTool;
  std::string path;
  std::string expected;
  std::string actual;

  bool operator==(const ValidationError&) const = default;
};

json to_document(const ValidationError& error);
json to_document(const std::vector<ValidationError>& errors);

/// Proof that a call passed validate_args against its spec. Only the
/// validation path can mint one.
class ValidatedCall {
public:
  const ToolCall& call() const { return call_; }

private:
  explicit ValidatedCall(ToolCall call) : call_(std::move(call)) {}
  ToolCall call_;

  friend std::variant<ValidatedCall, std::vector<ValidationError>>
  validate_args(const ToolSpec&, const ToolCall&, const std::set<std::string>&);
};

using ValidateResult = std::variant<ValidatedCall, std::vector<ValidationError>>;

/// Checks every field of call.args against spec.arg_schema. The error list is
/// exhaustive (every independent violation reported exactly once) and stable:
/// schema-declared fields in declaration order, then unknown keys in name
/// order, depth first. `opaque_paths` marks arguments whose values are bound
/// later (plan placeholders): presence counts, type and range checks are
/// skipped.
ValidateResult validate_args(const ToolSpec& spec, const ToolCall& call,
                             const std::set<std::string>& opaque_paths = {});

/// Proof of authorization. Carries the token copy with the consumed
/// invocation; persisting that copy is the caller's job.
struct Permit {
  ValidatedCall call;
  std::string token_id;
  CapabilityToken updated_token;
};

using AuthorizeResult = std::variant<Permit, std::vector<ValidationError>>;

/// Pure policy check, no invocation consumed. Used for plan-time dry runs.
std::vector<ValidationError> authorize_check(const ToolCall& call, const ToolSpec& spec,
                                             const CapabilityToken& token, Tick now,
                                             const std::set<std::string>& opaque_paths = {});

/// authorize_check + one invocation consumed on success.
AuthorizeResult authorize(const ValidatedCall& call, const ToolSpec& spec,
                          const CapabilityToken& token, Tick now,
                          const std::set<std::string>& opaque_paths = {});

class ToolRegistry {
public:
  /// Throws std::invalid_argument on malformed schemas, on duplicate
  /// name+version, and on actuating specs that do not demand an idempotency
  /// key.
  void add(ToolSpec spec);

  const ToolSpec* find(std::string_view name, std::string_view version) const;
  /// Any version of the named tool (there is at most one in every shipped
  /// registry); nullptr when absent.
  const ToolSpec* find_any(std::string_view name) const;
  std::vector<const ToolSpec*> list() const;
  bool empty() const { return specs_.empty(); }

  json to_document() const;
  std::string registry_hash() const;

  static ToolRegistry from_document(const json& doc);
  static ToolRegistry from_file(const std::string& path);

private:
  std::map<std::pair<std::string, std::string>, ToolSpec> specs_;
};

/// Registry-aware validation entry point: resolves the tool by name+version
/// (UnknownTool otherwise), then validate_args.
ValidateResult validate_call(const ToolRegistry& registry, const ToolCall& call,
                             const std::set<std::string>& opaque_paths = {});

} // namespace agentkernel::contracts
