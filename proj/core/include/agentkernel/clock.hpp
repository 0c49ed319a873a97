#pragma once

#include <cstdint>
#include <string>

namespace agentkernel {

/// Logical time. All timeouts, expiries, TTLs and rate windows are measured
/// in ticks so that an episode replays bit-exactly regardless of wall clock.
using Tick = std::uint64_t;

class LogicalClock {
public:
  Tick now() const { return tick_; }
  void advance(Tick n = 1) { tick_ += n; }

private:
  Tick tick_ = 0;
};

/// Monotone identifier source ("v0", "v1", ...). One per id family per
/// episode keeps generated ids deterministic.
struct IdSequence {
  std::string prefix;
  std::uint64_t next = 0;

  std::string make() { return prefix + std::to_string(next++); }
};

} // namespace agentkernel
