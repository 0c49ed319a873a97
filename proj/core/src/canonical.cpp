#include "agentkernel/canonical.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace agentkernel {

namespace {

void dump_into(const json& doc, std::string& out) {
  switch (doc.type()) {
  case json::value_t::null:
    out += "null";
    break;
  case json::value_t::boolean:
    out += doc.get<bool>() ? "true" : "false";
    break;
  case json::value_t::number_integer:
    out += std::to_string(doc.get<std::int64_t>());
    break;
  case json::value_t::number_unsigned:
    out += std::to_string(doc.get<std::uint64_t>());
    break;
  case json::value_t::number_float: {
    const double v = doc.get<double>();
    if (!std::isfinite(v)) {
      throw std::invalid_argument("canonical_dump: non-finite number");
    }
    // nlohmann emits the shortest round-trip decimal form.
    out += json(v).dump();
    break;
  }
  case json::value_t::string:
    out += doc.dump(); // dump() escapes per RFC 8259
    break;
  case json::value_t::array: {
    out += '[';
    bool first = true;
    for (const auto& item : doc) {
      if (!first) out += ',';
      first = false;
      dump_into(item, out);
    }
    out += ']';
    break;
  }
  case json::value_t::object: {
    // nlohmann objects are std::map-backed: iteration is already key-sorted.
    out += '{';
    bool first = true;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!first) out += ',';
      first = false;
      out += json(it.key()).dump();
      out += ':';
      dump_into(it.value(), out);
    }
    out += '}';
    break;
  }
  default:
    throw std::invalid_argument("canonical_dump: unsupported value type");
  }
}

} // namespace

std::string canonical_dump(const json& doc) {
  std::string out;
  out.reserve(128);
  dump_into(doc, out);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failure");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[md[i] >> 4];
    out[2 * i + 1] = hex[md[i] & 0x0f];
  }
  return out;
}

std::string canonical_hash(const json& doc) { return sha256_hex(canonical_dump(doc)); }

const std::string& zero_digest() {
  static const std::string zeros(64, '0');
  return zeros;
}

std::uint64_t stable_hash64(std::string_view text) {
  const std::string digest = sha256_hex(text);
  std::uint64_t value = 0;
  for (int i = 0; i < 16; ++i) {
    const char c = digest[static_cast<std::size_t>(i)];
    const std::uint64_t nibble =
        c <= '9' ? static_cast<std::uint64_t>(c - '0') : static_cast<std::uint64_t>(c - 'a' + 10);
    value = (value << 4) | nibble;
  }
  return value;
}

} // namespace agentkernel
