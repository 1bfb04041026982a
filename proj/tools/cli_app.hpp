#pragma once

#include <string>
#include <vector>

namespace lmflow::cli {

// Parses and executes one command line (without argv[0]). Returns the process
// exit code: 0 success, 1 domain/runtime failure, 2 usage error.
int run_command(const std::vector<std::string>& args);

}  // namespace lmflow::cli
