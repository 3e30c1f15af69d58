#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vonctl::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kUsage = 2,  // unknown flags, bad values
  kMissingFile = 3,
  kFormatError = 4,
  kVersionMismatch = 5,
  kInvalidInput = 6,
  kDiverged = 7,
  kCheckFailed = 8,
};

/// Runs one command line (args[0] is the program name). Results go to `out`,
/// progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vonctl::cli
