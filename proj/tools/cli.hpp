#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace repflow::cli {

/// Runs the command line `args` (args[0] is the program name).
/// Exit codes: 0 success, 1 usage error, 2 data error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace repflow::cli
