#include "agentkernel/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace agentkernel::memory {

std::string_view to_string(Tier tier) {
  switch (tier) {
  case Tier::Gold: return "gold";
  case Tier::Silver: return "silver";
  case Tier::Untrusted: return "untrusted";
  }
  return "untrusted";
}

Tier tier_from_string(std::string_view text) {
  if (text == "gold") return Tier::Gold;
  if (text == "silver") return Tier::Silver;
  if (text == "untrusted") return Tier::Untrusted;
  throw std::invalid_argument("unknown tier: " + std::string(text));
}

std::string_view to_string(RecordStatus status) {
  switch (status) {
  case RecordStatus::Draft: return "draft";
  case RecordStatus::Verified: return "verified";
  case RecordStatus::Published: return "published";
  }
  return "draft";
}

RecordStatus status_from_string(std::string_view text) {
  if (text == "draft") return RecordStatus::Draft;
  if (text == "verified") return RecordStatus::Verified;
  if (text == "published") return RecordStatus::Published;
  throw std::invalid_argument("unknown record status: " + std::string(text));
}

std::string_view to_string(MemoryErrorCode code) {
  switch (code) {
  case MemoryErrorCode::CapabilityDenied: return "CapabilityDenied";
  case MemoryErrorCode::HashMismatch: return "HashMismatch";
  case MemoryErrorCode::UnknownKey: return "UnknownKey";
  case MemoryErrorCode::EmptyInput: return "EmptyInput";
  case MemoryErrorCode::VerdictFailed: return "VerdictFailed";
  case MemoryErrorCode::InsufficientCorroboration: return "InsufficientCorroboration";
  case MemoryErrorCode::MalformedPolicy: return "MalformedPolicy";
  }
  return "UnknownKey";
}

// ---------------------------------------------------------------------------
// Sanitization

SanitizePolicy SanitizePolicy::defaults() {
  SanitizePolicy policy;
  policy.control_tokens = {"<|im_start|>", "<|im_end|>", "<|system|>", "<|endoftext|>",
                           "[INST]",       "[/INST]",    "<<SYS>>",    "<</SYS>>"};
  policy.deny_patterns = {"IGNORE ALL PREVIOUS INSTRUCTIONS"};
  return policy;
}

json to_document(const SanitizePolicy& policy) {
  return json{{"control_tokens", policy.control_tokens},
              {"deny_patterns", policy.deny_patterns}};
}

SanitizePolicy sanitize_policy_from_document(const json& doc) {
  SanitizePolicy policy;
  policy.control_tokens = doc.value("control_tokens", std::vector<std::string>{});
  policy.deny_patterns = doc.value("deny_patterns", std::vector<std::string>{});
  return policy;
}

json to_document(const SanitizeFlag& flag) {
  return json{{"pattern", flag.pattern},
              {"offset", flag.offset},
              {"length", flag.length},
              {"list", flag.list}};
}

SanitizeFlag sanitize_flag_from_document(const json& doc) {
  SanitizeFlag flag;
  flag.pattern = doc.at("pattern").get<std::string>();
  flag.offset = doc.at("offset").get<std::size_t>();
  flag.length = doc.at("length").get<std::size_t>();
  flag.list = doc.at("list").get<std::string>();
  return flag;
}

SanitizeResult sanitize(std::string_view content, const SanitizePolicy& policy) {
  SanitizeResult result;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::string_view matched;
    std::string_view list;
    for (const auto& pattern : policy.control_tokens) {
      if (!pattern.empty() && content.substr(pos, pattern.size()) == pattern) {
        matched = pattern;
        list = "control";
        break;
      }
    }
    if (matched.empty()) {
      for (const auto& pattern : policy.deny_patterns) {
        if (!pattern.empty() && content.substr(pos, pattern.size()) == pattern) {
          matched = pattern;
          list = "deny";
          break;
        }
      }
    }
    if (matched.empty()) {
      result.clean += content[pos];
      ++pos;
      continue;
    }
    result.flags.push_back(
        {std::string(matched), pos, matched.size(), std::string(list)});
    result.clean += kSanitizeMarker;
    pos += matched.size();
  }
  return result;
}

namespace {

// Sanitizes every string leaf of a structured content document.
json sanitize_content(const json& content, const SanitizePolicy& policy,
                      std::vector<SanitizeFlag>& flags) {
  if (content.is_string()) {
    auto result = sanitize(content.get_ref<const std::string&>(), policy);
    for (auto& flag : result.flags) flags.push_back(std::move(flag));
    return json(result.clean);
  }
  if (content.is_array()) {
    json out = json::array();
    for (const auto& item : content) out.push_back(sanitize_content(item, policy, flags));
    return out;
  }
  if (content.is_object()) {
    json out = json::object();
    for (auto it = content.begin(); it != content.end(); ++it) {
      out[it.key()] = sanitize_content(it.value(), policy, flags);
    }
    return out;
  }
  return content;
}

} // namespace

// ---------------------------------------------------------------------------
// Record serialization

json to_document(const MemoryRecord& record) {
  json flags = json::array();
  for (const auto& flag : record.sanitize_flags) flags.push_back(to_document(flag));
  json doc{{"id", record.id},
           {"version", record.version},
           {"content", record.content},
           {"source_uri", record.source_uri},
           {"content_hash", record.content_hash},
           {"policy_id", record.policy_id},
           {"created_at", record.created_at},
           {"tier", std::string(to_string(record.tier))},
           {"status", std::string(to_string(record.status))},
           {"validity", record.validity},
           {"back_pointers", record.back_pointers},
           {"corroborations", record.corroborations},
           {"sanitize_flags", std::move(flags)}};
  if (record.ttl) doc["ttl"] = *record.ttl;
  if (record.verdict_flag) doc["verdict_flag"] = *record.verdict_flag;
  return doc;
}

MemoryRecord record_from_document(const json& doc) {
  MemoryRecord record;
  record.id = doc.at("id").get<std::string>();
  record.version = doc.at("version").get<std::uint64_t>();
  record.content = doc.at("content");
  record.source_uri = doc.value("source_uri", std::string{});
  record.content_hash = doc.value("content_hash", std::string{});
  record.policy_id = doc.value("policy_id", std::string{});
  record.created_at = doc.value("created_at", Tick{0});
  record.tier = tier_from_string(doc.value("tier", std::string{"untrusted"}));
  record.status = status_from_string(doc.value("status", std::string{"draft"}));
  if (doc.contains("validity")) {
    record.validity = doc.at("validity").get<std::map<std::string, json>>();
  }
  if (doc.contains("ttl")) record.ttl = doc.at("ttl").get<Tick>();
  record.back_pointers = doc.value("back_pointers", std::vector<std::string>{});
  if (doc.contains("corroborations")) {
    record.corroborations = doc.at("corroborations").get<std::set<std::string>>();
  }
  if (doc.contains("sanitize_flags")) {
    for (const auto& flag : doc.at("sanitize_flags")) {
      record.sanitize_flags.push_back(sanitize_flag_from_document(flag));
    }
  }
  if (doc.contains("verdict_flag")) record.verdict_flag = doc.at("verdict_flag").get<std::string>();
  return record;
}

json to_document(const RetrievalPolicy& policy) {
  json weights = json::object();
  for (const auto& [tier, weight] : policy.tier_weights) {
    weights[std::string(to_string(tier))] = weight;
  }
  return json{{"policy_id", policy.policy_id},
              {"top_k", policy.top_k},
              {"tier_weights", std::move(weights)},
              {"recency_half_life", policy.recency_half_life},
              {"require_citation", policy.require_citation},
              {"context", policy.context}};
}

RetrievalPolicy retrieval_policy_from_document(const json& doc) {
  RetrievalPolicy policy;
  policy.policy_id = doc.at("policy_id").get<std::string>();
  policy.top_k = doc.value("top_k", std::size_t{1});
  if (doc.contains("tier_weights")) {
    policy.tier_weights.clear();
    for (auto it = doc.at("tier_weights").begin(); it != doc.at("tier_weights").end(); ++it) {
      policy.tier_weights[tier_from_string(it.key())] = it.value().get<std::uint64_t>();
    }
  }
  policy.recency_half_life = doc.value("recency_half_life", Tick{64});
  policy.require_citation = doc.value("require_citation", false);
  if (doc.contains("context")) {
    policy.context = doc.at("context").get<std::map<std::string, json>>();
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      current += c;
    } else if (c >= 'A' && c <= 'Z') {
      current += static_cast<char>(c - 'A' + 'a');
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double lexical_overlap(std::string_view query, const json& content) {
  const auto query_tokens = tokenize(query);
  if (query_tokens.empty()) return 0.0;
  const std::set<std::string> query_set(query_tokens.begin(), query_tokens.end());
  const std::string text =
      content.is_string() ? content.get<std::string>() : canonical_dump(content);
  const auto content_tokens = tokenize(text);
  const std::set<std::string> content_set(content_tokens.begin(), content_tokens.end());
  std::size_t shared = 0;
  for (const auto& token : query_set) {
    if (content_set.contains(token)) ++shared;
  }
  return static_cast<double>(shared) / static_cast<double>(query_set.size());
}

double recency_decay(Tick age, Tick half_life) {
  if (half_life == 0) return 1.0;
  const Tick halvings = age / half_life; // integer arithmetic, exact decay steps
  if (halvings > 1023) return 0.0;
  return std::ldexp(1.0, -static_cast<int>(halvings));
}

// ---------------------------------------------------------------------------
// Store

const WorkingSetEntry* WorkingSet::find(const std::string& id) const {
  for (const auto& entry : entries) {
    if (entry.id == id) return &entry;
  }
  return nullptr;
}

std::variant<MemoryStore::WriteReceipt, MemoryError>
MemoryStore::write(MemoryRecord record, const WritePolicy& policy,
                   const WriterCapability& writer) {
  if (!writer.curated && record.tier != Tier::Untrusted) {
    if (log_) {
      log_->append("memory", "WriteDenied",
                   json{{"id", record.id}, {"writer", writer.writer_id},
                        {"tier", std::string(to_string(record.tier))}});
    }
    return MemoryError{MemoryErrorCode::CapabilityDenied,
                       "uncurated writer " + writer.writer_id + " may only write untrusted"};
  }
  if (!record.content_hash.empty() && record.content_hash != canonical_hash(record.content)) {
    return MemoryError{MemoryErrorCode::HashMismatch, "content hash does not match content"};
  }
  if (record.tier == Tier::Untrusted) {
    std::vector<SanitizeFlag> flags;
    record.content = sanitize_content(record.content, policy.sanitize, flags);
    record.sanitize_flags = std::move(flags);
    if (log_ && !record.sanitize_flags.empty()) {
      json flag_docs = json::array();
      for (const auto& flag : record.sanitize_flags) flag_docs.push_back(to_document(flag));
      log_->append("memory", "Sanitized", json{{"id", record.id}, {"flags", flag_docs}});
    }
  }
  record.content_hash = canonical_hash(record.content);
  record.policy_id = policy.policy_id;
  record.status = RecordStatus::Draft;
  record.verdict_flag.reset();
  if (clock_) record.created_at = clock_->now();

  const auto it = records_.find(record.id);
  record.version = it == records_.end() ? 1 : it->second.version + 1;
  WriteReceipt receipt{record.id, record.version};
  if (log_) {
    log_->append("memory", "MemoryWrite",
                 json{{"id", record.id},
                      {"version", record.version},
                      {"tier", std::string(to_string(record.tier))},
                      {"policy_id", record.policy_id},
                      {"writer", writer.writer_id},
                      {"content_hash", record.content_hash},
                      {"source_uri", record.source_uri}});
  }
  persist(record);
  records_[record.id] = std::move(record);
  return receipt;
}

std::variant<MemoryRecord, MemoryError> MemoryStore::promote(const std::string& id,
                                                             const assurance::Verdict& verdict) {
  const auto it = records_.find(id);
  if (it == records_.end()) {
    return MemoryError{MemoryErrorCode::UnknownKey, "no record with id " + id};
  }
  MemoryRecord& record = it->second;
  const auto deny = [&](MemoryErrorCode code, std::string detail) {
    if (log_) {
      log_->append("memory", "PromotionDenied",
                   json{{"id", id}, {"verdict", verdict.verdict_id},
                        {"reason", std::string(to_string(code))}, {"detail", detail}});
    }
    return MemoryError{code, std::move(detail)};
  };
  if (!verdict.pass) {
    std::string reasons;
    for (const auto& reason : verdict.reason_codes) {
      if (!reasons.empty()) reasons += ",";
      reasons += reason;
    }
    record.verdict_flag = reasons.empty() ? "verdict_failed" : reasons;
    persist(record);
    return deny(MemoryErrorCode::VerdictFailed, "verdict " + verdict.verdict_id + " failed");
  }
  switch (record.status) {
  case RecordStatus::Draft:
    record.status = RecordStatus::Verified;
    record.verdict_flag.reset();
    break;
  case RecordStatus::Verified:
    if (record.corroborations.size() < 2) {
      return deny(MemoryErrorCode::InsufficientCorroboration,
                  "needs corroboration from >=2 distinct sources, has " +
                      std::to_string(record.corroborations.size()));
    }
    record.status = RecordStatus::Published;
    break;
  case RecordStatus::Published:
    return record; // terminal; nothing to do
  }
  if (log_) {
    log_->append("memory", "Promotion",
                 json{{"id", id},
                      {"to", std::string(to_string(record.status))},
                      {"verdict", verdict.verdict_id}});
  }
  persist(record);
  return record;
}

std::variant<RetrievalResult, MemoryError>
MemoryStore::retrieve(std::string_view query, const RetrievalPolicy& policy, Tick now) const {
  if (policy.top_k == 0) {
    return MemoryError{MemoryErrorCode::MalformedPolicy, "top_k must be >= 1"};
  }
  const auto weight_of = [&](Tier tier) -> std::uint64_t {
    const auto it = policy.tier_weights.find(tier);
    return it == policy.tier_weights.end() ? 0 : it->second;
  };
  const auto gold = weight_of(Tier::Gold);
  const auto silver = weight_of(Tier::Silver);
  const auto untrusted = weight_of(Tier::Untrusted);
  if (gold == 0 || silver == 0 || untrusted == 0 || gold < silver || silver < untrusted) {
    return MemoryError{MemoryErrorCode::MalformedPolicy,
                       "tier weights must be positive with gold >= silver >= untrusted"};
  }

  RetrievalResult result;
  result.policy_id = policy.policy_id;
  std::vector<ScoredItem> scored;
  for (const auto& [id, record] : records_) {
    const Tick age = now >= record.created_at ? now - record.created_at : 0;
    if (record.ttl && age > *record.ttl) continue;
    bool valid = true;
    for (const auto& [key, required] : record.validity) {
      const auto ctx = policy.context.find(key);
      if (ctx == policy.context.end() || ctx->second != required) {
        valid = false;
        break;
      }
    }
    if (!valid) continue;
    if (policy.require_citation && record.source_uri.empty()) continue;
    const double overlap = lexical_overlap(query, record.content);
    if (overlap == 0.0) continue; // no lexical relevance
    const double score = overlap * static_cast<double>(weight_of(record.tier)) *
                         recency_decay(age, policy.recency_half_life);
    scored.push_back({record, score});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.record.tier != b.record.tier) {
      return static_cast<int>(a.record.tier) > static_cast<int>(b.record.tier);
    }
    if (a.record.created_at != b.record.created_at) return a.record.created_at > b.record.created_at;
    return a.record.id < b.record.id;
  });
  if (scored.size() > policy.top_k) scored.resize(policy.top_k);
  result.items = std::move(scored);

  if (log_) {
    json items = json::array();
    for (const auto& item : result.items) {
      items.push_back(json{{"id", item.record.id},
                           {"score", item.score},
                           {"source_uri", item.record.source_uri},
                           {"content_hash", item.record.content_hash},
                           {"created_at", item.record.created_at}});
    }
    log_->append("memory", "Retrieved",
                 json{{"policy_id", policy.policy_id},
                      {"query", std::string(query)},
                      {"items", std::move(items)}});
  }
  return result;
}

std::variant<WorkingSet, MemoryError> MemoryStore::page_in(const std::vector<std::string>& keys,
                                                           WorkingSet ws, Tick now) const {
  constexpr Tick kWorkingSetHalfLife = 16;
  for (const auto& key : keys) {
    if (!records_.contains(key)) {
      return MemoryError{MemoryErrorCode::UnknownKey, "no record with id " + key};
    }
    bool found = false;
    for (auto& entry : ws.entries) {
      if (entry.id == key) {
        entry.access_count += 1;
        entry.last_access = now;
        found = true;
        break;
      }
    }
    if (!found) {
      ws.entries.push_back({key, 0.0, now, 1});
    }
    if (log_) {
      log_->append("memory", "PageIn", json{{"key", key}, {"tick", now}});
    }
    // Recency-frequency priority, recomputed under the current clock.
    for (auto& entry : ws.entries) {
      entry.priority = static_cast<double>(entry.access_count) *
                       recency_decay(now - entry.last_access, kWorkingSetHalfLife);
    }
    while (ws.entries.size() > ws.capacity) {
      auto victim = std::min_element(
          ws.entries.begin(), ws.entries.end(), [](const WorkingSetEntry& a, const WorkingSetEntry& b) {
            if (a.priority != b.priority) return a.priority < b.priority;
            if (a.last_access != b.last_access) return a.last_access < b.last_access;
            return a.id < b.id;
          });
      if (log_) {
        log_->append("memory", "Evicted",
                     json{{"key", victim->id}, {"reason", "capacity"}});
      }
      ws.entries.erase(victim);
    }
  }
  return ws;
}

std::variant<WorkingSet, MemoryError> MemoryStore::evict(const std::vector<std::string>& keys,
                                                         const std::string& reason,
                                                         WorkingSet ws) const {
  for (const auto& key : keys) {
    const auto it = std::find_if(ws.entries.begin(), ws.entries.end(),
                                 [&](const WorkingSetEntry& e) { return e.id == key; });
    if (it == ws.entries.end()) {
      return MemoryError{MemoryErrorCode::UnknownKey, "key not resident: " + key};
    }
    ws.entries.erase(it);
    if (log_) {
      log_->append("memory", "Evicted", json{{"key", key}, {"reason", reason}});
    }
  }
  return ws;
}

const MemoryRecord* MemoryStore::find(const std::string& id) const {
  const auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

std::vector<const MemoryRecord*> MemoryStore::all() const {
  std::vector<const MemoryRecord*> out;
  out.reserve(records_.size());
  for (const auto& [id, record] : records_) out.push_back(&record);
  return out;
}

void MemoryStore::attach_sink(const std::string& path) { sink_path_ = path; }

void MemoryStore::persist(const MemoryRecord& record) {
  if (sink_path_.empty()) return;
  std::ofstream out(sink_path_, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot append to store file: " + sink_path_);
  out << canonical_dump(to_document(record)) << '\n';
}

MemoryStore MemoryStore::load_file(const std::string& path, audit::AuditLog* log,
                                   const LogicalClock* clock) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open store file: " + path);
  MemoryStore store(log, clock);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MemoryRecord record = record_from_document(json::parse(line));
    store.records_[record.id] = std::move(record); // last line per id wins
  }
  return store;
}

// ---------------------------------------------------------------------------
// Compaction

std::variant<MemoryRecord, MemoryError> compact(const std::vector<MemoryRecord>& inputs,
                                                const Summarizer& summarizer) {
  if (inputs.empty()) {
    return MemoryError{MemoryErrorCode::EmptyInput, "nothing to compact"};
  }
  std::vector<MemoryRecord> ordered = inputs;
  std::sort(ordered.begin(), ordered.end(), [](const MemoryRecord& a, const MemoryRecord& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.id < b.id;
  });
  json input_hashes = json::array();
  for (const auto& record : ordered) input_hashes.push_back(record.content_hash);

  MemoryRecord summary;
  summary.id = "summary-" + canonical_hash(input_hashes).substr(0, 16);
  summary.content = summarizer(ordered);
  summary.content_hash = canonical_hash(summary.content);
  summary.source_uri = "memory:compact";
  summary.policy_id = "compact-v1";
  summary.tier = Tier::Silver;
  summary.status = RecordStatus::Draft;
  Tick latest = 0;
  for (const auto& record : ordered) {
    summary.back_pointers.push_back(record.id);
    summary.corroborations.insert(record.source_uri);
    latest = std::max(latest, record.created_at);
  }
  summary.created_at = latest;
  summary.version = 1;
  return summary;
}

json episode_summarizer(const std::vector<MemoryRecord>& inputs) {
  json actions = json::array();
  json outcomes = json::array();
  std::string task;
  for (const auto& record : inputs) {
    if (record.content.is_object() && record.content.contains("task") && task.empty()) {
      task = record.content.at("task").get<std::string>();
    }
    json action{{"record", record.id}, {"source", record.source_uri}};
    if (record.content.is_object() && record.content.contains("action")) {
      action["action"] = record.content.at("action");
    }
    actions.push_back(std::move(action));
    if (record.content.is_object() && record.content.contains("outcome")) {
      outcomes.push_back(record.content.at("outcome"));
    }
  }
  return json{{"task", task}, {"actions", std::move(actions)}, {"outcomes", std::move(outcomes)}};
}

} // namespace agentkernel::memory
