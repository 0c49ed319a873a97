#include "agentkernel/document_path.hpp"

#include <stdexcept>

namespace agentkernel {

std::optional<json> document_at_path(const json& doc, std::string_view path) {
  const json* cur = &doc;
  std::size_t pos = 0;
  while (pos < path.size()) {
    if (path[pos] == '[') {
      const std::size_t close = path.find(']', pos);
      if (close == std::string_view::npos) return std::nullopt;
      const std::string_view digits = path.substr(pos + 1, close - pos - 1);
      if (digits.empty() || !cur->is_array()) return std::nullopt;
      std::size_t index = 0;
      for (char c : digits) {
        if (c < '0' || c > '9') return std::nullopt;
        index = index * 10 + static_cast<std::size_t>(c - '0');
      }
      if (index >= cur->size()) return std::nullopt;
      cur = &(*cur)[index];
      pos = close + 1;
      if (pos < path.size() && path[pos] == '.') ++pos;
      continue;
    }
    std::size_t end = pos;
    while (end < path.size() && path[end] != '.' && path[end] != '[') ++end;
    const std::string key(path.substr(pos, end - pos));
    if (!cur->is_object() || !cur->contains(key)) return std::nullopt;
    cur = &cur->at(key);
    pos = end;
    if (pos < path.size() && path[pos] == '.') ++pos;
  }
  return std::make_optional<json>(*cur);
}

namespace {

bool compare(const json& lhs, PredicateOp op, const json& rhs) {
  if (lhs.is_number() && rhs.is_number()) {
    const double a = lhs.get<double>();
    const double b = rhs.get<double>();
    switch (op) {
    case PredicateOp::Eq: return a == b;
    case PredicateOp::Ne: return a != b;
    case PredicateOp::Lt: return a < b;
    case PredicateOp::Le: return a <= b;
    case PredicateOp::Gt: return a > b;
    case PredicateOp::Ge: return a >= b;
    case PredicateOp::Exists: return true;
    }
  }
  switch (op) {
  case PredicateOp::Eq: return lhs == rhs;
  case PredicateOp::Ne: return lhs != rhs;
  case PredicateOp::Exists: return true;
  default: return false; // ordering undefined for non-numbers
  }
}

} // namespace

bool eval_predicate(const Predicate& pred, const json& doc) {
  const auto value = document_at_path(doc, pred.path);
  if (pred.op == PredicateOp::Exists) return value.has_value();
  if (!value.has_value()) return false;
  return compare(*value, pred.op, pred.literal);
}

std::string_view to_string(PredicateOp op) {
  switch (op) {
  case PredicateOp::Eq: return "==";
  case PredicateOp::Ne: return "!=";
  case PredicateOp::Lt: return "<";
  case PredicateOp::Le: return "<=";
  case PredicateOp::Gt: return ">";
  case PredicateOp::Ge: return ">=";
  case PredicateOp::Exists: return "exists";
  }
  return "exists";
}

PredicateOp predicate_op_from_string(std::string_view text) {
  if (text == "==") return PredicateOp::Eq;
  if (text == "!=") return PredicateOp::Ne;
  if (text == "<") return PredicateOp::Lt;
  if (text == "<=") return PredicateOp::Le;
  if (text == ">") return PredicateOp::Gt;
  if (text == ">=") return PredicateOp::Ge;
  if (text == "exists") return PredicateOp::Exists;
  throw std::invalid_argument("unknown predicate op: " + std::string(text));
}

json to_document(const Predicate& pred) {
  return json{{"path", pred.path}, {"op", std::string(to_string(pred.op))}, {"literal", pred.literal}};
}

Predicate predicate_from_document(const json& doc) {
  Predicate p;
  p.path = doc.at("path").get<std::string>();
  p.op = predicate_op_from_string(doc.at("op").get<std::string>());
  if (doc.contains("literal")) p.literal = doc.at("literal");
  return p;
}

} // namespace agentkernel
