#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace evg::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Runs one command line (args[0] is the program name). Metrics and reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evg::cli
