#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mmfn::cli {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kBracketViolated = 1,
  kValidationFailed = 2,
  kParseFailed = 3,
  kPrecondition = 4,
  kNoConvergence = 5,
};

// Root seed used when --seed is absent.
inline constexpr std::uint64_t kDefaultSeed = 20240917;

// Runs the tool on argv-style arguments (args[0] is the program name),
// writing reports to out and diagnostics to err. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfn::cli
