#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace onedse::cli {

/// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace onedse::cli
