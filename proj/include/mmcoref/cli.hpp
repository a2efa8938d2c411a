#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmcoref::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. A single JSON
/// summary goes to `out`; diagnostics and help text go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mmcoref::cli
