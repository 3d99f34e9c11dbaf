#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace saip::cli {

enum ExitCode : int { ok = 0, usage_error = 1, numeric_failure = 2, verification_failure = 3 };

/// Runs `saipnet <args...>`; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace saip::cli
