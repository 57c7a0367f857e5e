#pragma once
// The dspn command line tool as a library, so tests can drive it in process.

#include <iosfwd>
#include <string>
#include <vector>

namespace dspn::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Parses `args` (without the program name) and runs one subcommand. Errors
/// are reported on `err` as one JSON line and mapped to an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dspn::cli
