#pragma once

#include <string>
#include <vector>

namespace msnet {

/// Parses and dispatches one command-line invocation (argv without the
/// program name). Returns the process exit code: 0 on success, 1 on runtime
/// failure, 2 on usage or configuration errors.
int run_command(const std::vector<std::string>& args);

}  // namespace msnet
