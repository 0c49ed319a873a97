#pragma once

#include <map>
#include <string>

namespace agentkernel {

// Bump a component's version whenever its observable event stream changes;
// replay refuses traces recorded under a different version table.
inline std::map<std::string, std::string> component_versions() {
  return {
      {"contracts", "1.0.0"}, {"gateway", "1.0.0"},  {"memory", "1.0.0"},
      {"planner", "1.0.0"},   {"assurance", "1.0.0"}, {"protocol", "1.0.0"},
      {"audit", "1.0.0"},     {"harness", "1.0.0"},
  };
}

} // namespace agentkernel
