#pragma once

#include "agentkernel/canonical.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace agentkernel {

/// Looks up a dotted field path with optional array indices ("a.b[2].c").
/// Returns nullopt when any segment is missing. An empty path addresses the
/// whole document.
std::optional<json> document_at_path(const json& doc, std::string_view path);

/// Comparison language for plan pre/postconditions and reconsideration
/// triggers: <path> <op> <literal>. Numbers compare numerically, everything
/// else by document equality. Exists ignores the literal.
enum class PredicateOp { Eq, Ne, Lt, Le, Gt, Ge, Exists };

struct Predicate {
  std::string path;
  PredicateOp op = PredicateOp::Exists;
  json literal;
};

bool eval_predicate(const Predicate& pred, const json& doc);

std::string_view to_string(PredicateOp op);
PredicateOp predicate_op_from_string(std::string_view text);

json to_document(const Predicate& pred);
Predicate predicate_from_document(const json& doc);

} // namespace agentkernel
