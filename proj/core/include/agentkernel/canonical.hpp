#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>

namespace agentkernel {

using json = nlohmann::json;

/// Canonical document text: object keys sorted, no insignificant whitespace,
/// integers as shortest decimal, floating-point values as shortest
/// round-trip decimal. Every hash in the system is taken over this form, so
/// two logically equal documents always digest identically.
/// Throws std::invalid_argument on non-finite numbers or binary values.
std::string canonical_dump(const json& doc);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// sha256_hex(canonical_dump(doc))
std::string canonical_hash(const json& doc);

/// 64 zero hex digits; the genesis predecessor in hash chains.
const std::string& zero_digest();

/// Identifier recorded in trace headers so a replay selects the same digest.
inline constexpr std::string_view kHashFunctionId = "sha-256";

/// Deterministic 64-bit value derived from the digest of `text`. Used where
/// a seeded, platform-independent pseudo-random value is needed (backoff
/// jitter); std::hash is not stable across implementations.
std::uint64_t stable_hash64(std::string_view text);

} // namespace agentkernel
