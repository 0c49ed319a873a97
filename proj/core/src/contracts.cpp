#include "agentkernel/contracts.hpp"

#include "agentkernel/document_path.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace agentkernel::contracts {

bool scope_leq(ToolScope a, ToolScope b) {
  return static_cast<int>(a) <= static_cast<int>(b);
}

std::string_view to_string(ToolScope scope) {
  switch (scope) {
  case ToolScope::ReadOnly: return "read_only";
  case ToolScope::Simulate: return "simulate";
  case ToolScope::ActuateReversible: return "actuate_reversible";
  case ToolScope::ActuateIrreversible: return "actuate_irreversible";
  }
  return "read_only";
}

ToolScope scope_from_string(std::string_view text) {
  if (text == "read_only") return ToolScope::ReadOnly;
  if (text == "simulate") return ToolScope::Simulate;
  if (text == "actuate_reversible") return ToolScope::ActuateReversible;
  if (text == "actuate_irreversible") return ToolScope::ActuateIrreversible;
  throw std::invalid_argument("unknown tool scope: " + std::string(text));
}

std::string_view to_string(FieldKind kind) {
  switch (kind) {
  case FieldKind::Text: return "text";
  case FieldKind::Integer: return "integer";
  case FieldKind::Decimal: return "decimal";
  case FieldKind::Boolean: return "boolean";
  case FieldKind::Enumeration: return "enumeration";
  case FieldKind::Document: return "document";
  case FieldKind::List: return "list";
  }
  return "text";
}

FieldKind field_kind_from_string(std::string_view text) {
  if (text == "text") return FieldKind::Text;
  if (text == "integer") return FieldKind::Integer;
  if (text == "decimal") return FieldKind::Decimal;
  if (text == "boolean") return FieldKind::Boolean;
  if (text == "enumeration") return FieldKind::Enumeration;
  if (text == "document") return FieldKind::Document;
  if (text == "list") return FieldKind::List;
  throw std::invalid_argument("unknown field kind: " + std::string(text));
}

std::string_view to_string(ValidationCode code) {
  switch (code) {
  case ValidationCode::UnknownTool: return "UnknownTool";
  case ValidationCode::UnknownField: return "UnknownField";
  case ValidationCode::MissingField: return "MissingField";
  case ValidationCode::TypeMismatch: return "TypeMismatch";
  case ValidationCode::OutOfRange: return "OutOfRange";
  case ValidationCode::NotInEnumeration: return "NotInEnumeration";
  case ValidationCode::ScopeExceeded: return "ScopeExceeded";
  case ValidationCode::CapExceeded: return "CapExceeded";
  case ValidationCode::TokenExpired: return "TokenExpired";
  case ValidationCode::TokenExhausted: return "TokenExhausted";
  case ValidationCode::ToolNotAllowlisted: return "ToolNotAllowlisted";
  case ValidationCode::MissingIdempotencyKey: return "MissingIdempotencyKey";
  }
  return "UnknownTool";
}

// ---------------------------------------------------------------------------
// Schema structure checks

namespace {

void collect_schema_problems(const std::vector<FieldSchema>& fields, const std::string& prefix,
                             std::vector<std::string>& out) {
  std::set<std::string> seen;
  for (const auto& field : fields) {
    const std::string path = prefix.empty() ? field.name : prefix + "." + field.name;
    if (!seen.insert(field.name).second) {
      out.push_back("duplicate sibling field name: " + path);
    }
    if (field.min && field.max && *field.min > *field.max) {
      out.push_back("min exceeds max at " + path);
    }
    if (field.kind == FieldKind::Enumeration && field.allowed.empty()) {
      out.push_back("enumeration without allowed values at " + path);
    }
    if ((field.kind == FieldKind::Document || field.kind == FieldKind::List) &&
        field.children.empty()) {
      out.push_back("nested kind without children at " + path);
    }
    if (!field.children.empty()) {
      collect_schema_problems(field.children, path, out);
    }
  }
}

} // namespace

std::vector<std::string> schema_problems(const std::vector<FieldSchema>& fields) {
  std::vector<std::string> out;
  collect_schema_problems(fields, "", out);
  return out;
}

// ---------------------------------------------------------------------------
// Argument validation

namespace {

std::string render(const json& value) { return canonical_dump(value); }

std::string render_number(double v) {
  if (v == static_cast<double>(static_cast<std::int64_t>(v))) {
    return std::to_string(static_cast<std::int64_t>(v));
  }
  return json(v).dump();
}

class ArgWalker {
public:
  ArgWalker(const std::set<std::string>& opaque, std::vector<ValidationError>& out)
      : opaque_(opaque), out_(out) {}

  void walk_object(const std::vector<FieldSchema>& fields, const json& doc,
                   const std::string& prefix) {
    // Declared fields first, in declaration order; unknown keys after, in
    // name order. This is the stable reporting order for the whole module.
    for (const auto& field : fields) {
      const std::string path = prefix.empty() ? field.name : prefix + "." + field.name;
      if (!doc.contains(field.name)) {
        if (field.required && !opaque_.contains(path)) {
          emit(ValidationCode::MissingField, path, std::string(to_string(field.kind)), "absent");
        }
        continue;
      }
      check_value(field, doc.at(field.name), path);
    }
    std::set<std::string> declared;
    for (const auto& field : fields) declared.insert(field.name);
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!declared.contains(it.key())) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        emit(ValidationCode::UnknownField, path, "no such field", it.value().type_name());
      }
    }
  }

  void check_value(const FieldSchema& field, const json& value, const std::string& path) {
    if (opaque_.contains(path)) return; // bound later; only presence counts
    switch (field.kind) {
    case FieldKind::Text:
      if (!value.is_string()) {
        emit(ValidationCode::TypeMismatch, path, "text", value.type_name());
        return;
      }
      if (field.max_length && value.get_ref<const std::string&>().size() > *field.max_length) {
        emit(ValidationCode::OutOfRange, path, "length ≤ " + std::to_string(*field.max_length),
             "length " + std::to_string(value.get_ref<const std::string&>().size()));
      }
      return;
    case FieldKind::Integer:
      if (!value.is_number_integer() && !value.is_number_unsigned()) {
        emit(ValidationCode::TypeMismatch, path, "integer", value.type_name());
        return;
      }
      check_bounds(field, value.get<double>(), path);
      return;
    case FieldKind::Decimal:
      if (!value.is_number()) {
        emit(ValidationCode::TypeMismatch, path, "decimal", value.type_name());
        return;
      }
      check_bounds(field, value.get<double>(), path);
      return;
    case FieldKind::Boolean:
      if (!value.is_boolean()) {
        emit(ValidationCode::TypeMismatch, path, "boolean", value.type_name());
      }
      return;
    case FieldKind::Enumeration: {
      const bool member = std::any_of(field.allowed.begin(), field.allowed.end(),
                                      [&](const json& v) { return v == value; });
      if (!member) {
        emit(ValidationCode::NotInEnumeration, path, render(json(field.allowed)), render(value));
      }
      return;
    }
    case FieldKind::Document:
      if (!value.is_object()) {
        emit(ValidationCode::TypeMismatch, path, "document", value.type_name());
        return;
      }
      walk_object(field.children, value, path);
      return;
    case FieldKind::List: {
      if (!value.is_array()) {
        emit(ValidationCode::TypeMismatch, path, "list", value.type_name());
        return;
      }
      const FieldSchema& element = field.children.front();
      for (std::size_t i = 0; i < value.size(); ++i) {
        check_value(element, value[i], path + "[" + std::to_string(i) + "]");
      }
      return;
    }
    }
  }

private:
  void check_bounds(const FieldSchema& field, double v, const std::string& path) {
    if (field.min && v < *field.min) {
      emit(ValidationCode::OutOfRange, path, "≥ " + render_number(*field.min),
           render_number(v));
    }
    if (field.max && v > *field.max) {
      emit(ValidationCode::OutOfRange, path, "≤ " + render_number(*field.max),
           render_number(v));
    }
  }

  void emit(ValidationCode code, std::string path, std::string expected, std::string actual) {
    out_.push_back({code, std::move(path), std::move(expected), std::move(actual)});
  }

  const std::set<std::string>& opaque_;
  std::vector<ValidationError>& out_;
};

} // namespace

ValidateResult validate_args(const ToolSpec& spec, const ToolCall& call,
                             const std::set<std::string>& opaque_paths) {
  std::vector<ValidationError> errors;
  if (!call.args.is_object()) {
    errors.push_back({ValidationCode::TypeMismatch, "", "document", call.args.type_name()});
  } else {
    ArgWalker walker(opaque_paths, errors);
    walker.walk_object(spec.arg_schema, call.args, "");
  }
  if (spec.requires_idempotency_key && !call.idempotency_key) {
    errors.push_back(
        {ValidationCode::MissingIdempotencyKey, "idempotency_key", "idempotency key", "absent"});
  }
  if (!errors.empty()) return errors;
  return ValidatedCall(call);
}

ValidateResult validate_call(const ToolRegistry& registry, const ToolCall& call,
                             const std::set<std::string>& opaque_paths) {
  const ToolSpec* spec = registry.find(call.tool_name, call.tool_version);
  if (spec == nullptr) {
    return std::vector<ValidationError>{{ValidationCode::UnknownTool, "",
                                         "registered tool name+version",
                                         call.tool_name + "@" + call.tool_version}};
  }
  return validate_args(*spec, call, opaque_paths);
}

// ---------------------------------------------------------------------------
// Authorization

bool allowlist_matches(const std::vector<std::string>& patterns, std::string_view tool_name) {
  for (const auto& pattern : patterns) {
    if (!pattern.empty() && pattern.back() == '*') {
      const std::string_view prefix(pattern.data(), pattern.size() - 1);
      if (tool_name.size() >= prefix.size() && tool_name.substr(0, prefix.size()) == prefix) {
        return true;
      }
    } else if (pattern == tool_name) {
      return true;
    }
  }
  return false;
}

std::vector<ValidationError> authorize_check(const ToolCall& call, const ToolSpec& spec,
                                             const CapabilityToken& token, Tick now,
                                             const std::set<std::string>& opaque_paths) {
  std::vector<ValidationError> errors;
  if (!allowlist_matches(token.tool_allowlist, call.tool_name)) {
    errors.push_back({ValidationCode::ToolNotAllowlisted, "",
                      render(json(token.tool_allowlist)), call.tool_name});
  }
  if (!scope_leq(spec.scope, token.scope_ceiling)) {
    errors.push_back({ValidationCode::ScopeExceeded, "",
                      "≤ " + std::string(to_string(token.scope_ceiling)),
                      std::string(to_string(spec.scope))});
  }
  for (const auto& [path, cap] : token.parameter_caps) {
    if (opaque_paths.contains(path)) continue; // value bound later; checked at bind time
    const auto value = document_at_path(call.args, path);
    if (!value) continue; // absent args are validation's concern
    if (cap.max_value) {
      if (!value->is_number()) {
        errors.push_back({ValidationCode::CapExceeded, path,
                          "numeric ≤ " + render_number(*cap.max_value),
                          value->type_name()});
      } else if (value->get<double>() > *cap.max_value) {
        errors.push_back({ValidationCode::CapExceeded, path,
                          "≤ " + render_number(*cap.max_value),
                          render_number(value->get<double>())});
      }
    }
    if (!cap.allowed.empty()) {
      const bool member = std::any_of(cap.allowed.begin(), cap.allowed.end(),
                                      [&](const json& v) { return v == *value; });
      if (!member) {
        errors.push_back(
            {ValidationCode::CapExceeded, path, "one of " + render(json(cap.allowed)),
             render(*value)});
      }
    }
  }
  if (now >= token.expiry) {
    errors.push_back({ValidationCode::TokenExpired, "",
                      "now < " + std::to_string(token.expiry), std::to_string(now)});
  }
  if (token.invocations_used >= token.max_invocations) {
    errors.push_back({ValidationCode::TokenExhausted, "",
                      "< " + std::to_string(token.max_invocations),
                      std::to_string(token.invocations_used)});
  }
  return errors;
}

AuthorizeResult authorize(const ValidatedCall& call, const ToolSpec& spec,
                          const CapabilityToken& token, Tick now,
                          const std::set<std::string>& opaque_paths) {
  auto errors = authorize_check(call.call(), spec, token, now, opaque_paths);
  if (!errors.empty()) return errors;
  CapabilityToken updated = token;
  updated.invocations_used += 1;
  return Permit{call, token.token_id, std::move(updated)};
}

// ---------------------------------------------------------------------------
// Serialization

std::string call_fingerprint(const ToolCall& call) {
  return canonical_hash(
      json{{"args", call.args}, {"tool_name", call.tool_name}, {"tool_version", call.tool_version}});
}

json to_document(const FieldSchema& field) {
  json doc{{"name", field.name}, {"kind", std::string(to_string(field.kind))},
           {"required", field.required}};
  if (field.min) doc["min"] = *field.min;
  if (field.max) doc["max"] = *field.max;
  if (!field.allowed.empty()) doc["allowed"] = field.allowed;
  if (field.max_length) doc["max_length"] = *field.max_length;
  if (!field.children.empty()) {
    json children = json::array();
    for (const auto& child : field.children) children.push_back(to_document(child));
    doc["children"] = std::move(children);
  }
  return doc;
}

FieldSchema field_schema_from_document(const json& doc) {
  FieldSchema field;
  field.name = doc.at("name").get<std::string>();
  field.kind = field_kind_from_string(doc.at("kind").get<std::string>());
  field.required = doc.value("required", true);
  if (doc.contains("min")) field.min = doc.at("min").get<double>();
  if (doc.contains("max")) field.max = doc.at("max").get<double>();
  if (doc.contains("allowed")) field.allowed = doc.at("allowed").get<std::vector<json>>();
  if (doc.contains("max_length")) field.max_length = doc.at("max_length").get<std::size_t>();
  if (doc.contains("children")) {
    for (const auto& child : doc.at("children")) {
      field.children.push_back(field_schema_from_document(child));
    }
  }
  return field;
}

json to_document(const ToolSpec& spec) {
  json schema = json::array();
  for (const auto& field : spec.arg_schema) schema.push_back(to_document(field));
  return json{{"name", spec.name},
              {"version", spec.version},
              {"scope", std::string(to_string(spec.scope))},
              {"arg_schema", std::move(schema)},
              {"timeout", spec.timeout},
              {"rate_limit", json{{"max_calls", spec.rate_limit.max_calls},
                                  {"window", spec.rate_limit.window}}},
              {"requires_idempotency_key", spec.requires_idempotency_key},
              {"transient_error_codes", spec.transient_error_codes}};
}

ToolSpec tool_spec_from_document(const json& doc) {
  ToolSpec spec;
  spec.name = doc.at("name").get<std::string>();
  spec.version = doc.at("version").get<std::string>();
  spec.scope = scope_from_string(doc.at("scope").get<std::string>());
  if (doc.contains("arg_schema")) {
    for (const auto& field : doc.at("arg_schema")) {
      spec.arg_schema.push_back(field_schema_from_document(field));
    }
  }
  spec.timeout = doc.value("timeout", Tick{0});
  if (doc.contains("rate_limit")) {
    spec.rate_limit.max_calls = doc.at("rate_limit").value("max_calls", std::uint64_t{0});
    spec.rate_limit.window = doc.at("rate_limit").value("window", Tick{0});
  }
  spec.requires_idempotency_key = doc.value("requires_idempotency_key", false);
  if (doc.contains("transient_error_codes")) {
    spec.transient_error_codes =
        doc.at("transient_error_codes").get<std::set<std::string>>();
  }
  return spec;
}

json to_document(const CapabilityToken& token) {
  json caps = json::object();
  for (const auto& [path, cap] : token.parameter_caps) {
    json c = json::object();
    if (cap.max_value) c["max_value"] = *cap.max_value;
    if (!cap.allowed.empty()) c["allowed"] = cap.allowed;
    caps[path] = std::move(c);
  }
  return json{{"token_id", token.token_id},
              {"subject", token.subject},
              {"tool_allowlist", token.tool_allowlist},
              {"scope_ceiling", std::string(to_string(token.scope_ceiling))},
              {"parameter_caps", std::move(caps)},
              {"expiry", token.expiry},
              {"max_invocations", token.max_invocations},
              {"invocations_used", token.invocations_used}};
}

CapabilityToken token_from_document(const json& doc) {
  CapabilityToken token;
  token.token_id = doc.at("token_id").get<std::string>();
  token.subject = doc.value("subject", std::string{});
  token.tool_allowlist = doc.at("tool_allowlist").get<std::vector<std::string>>();
  token.scope_ceiling = scope_from_string(doc.at("scope_ceiling").get<std::string>());
  if (doc.contains("parameter_caps")) {
    for (auto it = doc.at("parameter_caps").begin(); it != doc.at("parameter_caps").end(); ++it) {
      ParameterCap cap;
      if (it.value().contains("max_value")) cap.max_value = it.value().at("max_value").get<double>();
      if (it.value().contains("allowed")) {
        cap.allowed = it.value().at("allowed").get<std::vector<json>>();
      }
      token.parameter_caps[it.key()] = std::move(cap);
    }
  }
  token.expiry = doc.value("expiry", Tick{0});
  token.max_invocations = doc.value("max_invocations", std::uint64_t{0});
  token.invocations_used = doc.value("invocations_used", std::uint64_t{0});
  return token;
}

json to_document(const ToolCall& call) {
  json doc{{"call_id", call.call_id},
           {"tool_name", call.tool_name},
           {"tool_version", call.tool_version},
           {"args", call.args},
           {"issuer", call.issuer}};
  if (call.idempotency_key) doc["idempotency_key"] = *call.idempotency_key;
  if (call.origin_step) doc["origin_step"] = *call.origin_step;
  if (call.sim_verdict_ref) doc["sim_verdict_ref"] = *call.sim_verdict_ref;
  return doc;
}

ToolCall call_from_document(const json& doc) {
  ToolCall call;
  call.call_id = doc.at("call_id").get<std::string>();
  call.tool_name = doc.at("tool_name").get<std::string>();
  call.tool_version = doc.value("tool_version", std::string{});
  call.args = doc.value("args", json::object());
  call.issuer = doc.value("issuer", std::string{});
  if (doc.contains("idempotency_key")) call.idempotency_key = doc.at("idempotency_key").get<std::string>();
  if (doc.contains("origin_step")) call.origin_step = doc.at("origin_step").get<std::string>();
  if (doc.contains("sim_verdict_ref")) call.sim_verdict_ref = doc.at("sim_verdict_ref").get<std::string>();
  return call;
}

json to_document(const ValidationError& error) {
  return json{{"code", std::string(to_string(error.code))},
              {"path", error.path},
              {"expected", error.expected},
              {"actual", error.actual}};
}

json to_document(const std::vector<ValidationError>& errors) {
  json doc = json::array();
  for (const auto& error : errors) doc.push_back(to_document(error));
  return doc;
}

// ---------------------------------------------------------------------------
// Registry

void ToolRegistry::add(ToolSpec spec) {
  auto problems = schema_problems(spec.arg_schema);
  if (!problems.empty()) {
    throw std::invalid_argument("tool " + spec.name + ": " + problems.front());
  }
  if (!scope_leq(spec.scope, ToolScope::Simulate) && !spec.requires_idempotency_key) {
    throw std::invalid_argument("tool " + spec.name +
                                ": actuating tools must require an idempotency key");
  }
  auto key = std::make_pair(spec.name, spec.version);
  if (specs_.contains(key)) {
    throw std::invalid_argument("duplicate tool registration: " + spec.name + "@" + spec.version);
  }
  specs_.emplace(std::move(key), std::move(spec));
}

const ToolSpec* ToolRegistry::find(std::string_view name, std::string_view version) const {
  const auto it = specs_.find(std::make_pair(std::string(name), std::string(version)));
  return it == specs_.end() ? nullptr : &it->second;
}

const ToolSpec* ToolRegistry::find_any(std::string_view name) const {
  for (const auto& [key, spec] : specs_) {
    if (key.first == name) return &spec;
  }
  return nullptr;
}

std::vector<const ToolSpec*> ToolRegistry::list() const {
  std::vector<const ToolSpec*> out;
  out.reserve(specs_.size());
  for (const auto& [key, spec] : specs_) out.push_back(&spec);
  return out;
}

json ToolRegistry::to_document() const {
  json tools = json::array();
  for (const auto& [key, spec] : specs_) tools.push_back(contracts::to_document(spec));
  return json{{"tools", std::move(tools)}};
}

std::string ToolRegistry::registry_hash() const { return canonical_hash(to_document()); }

ToolRegistry ToolRegistry::from_document(const json& doc) {
  ToolRegistry registry;
  for (const auto& tool : doc.at("tools")) {
    registry.add(tool_spec_from_document(tool));
  }
  return registry;
}

ToolRegistry ToolRegistry::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tool registry file: " + path);
  return from_document(json::parse(in));
}

} // namespace agentkernel::contracts
