#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace compactnet::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kUnreachable = 3,
  kTrainingFailed = 4,
  kToleranceExceeded = 5,
};

// Entry point shared by the executable and the tests. args[0] is the
// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace compactnet::cli
