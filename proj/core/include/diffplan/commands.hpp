#pragma once

#include <string>
#include <vector>

namespace diffplan {

// Parses and runs one CLI invocation (args exclude the program name).
// Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime
// failure. Log verbosity via the DIFFPLAN_LOG environment variable.
int run_cli(const std::vector<std::string>& args);

}  // namespace diffplan
