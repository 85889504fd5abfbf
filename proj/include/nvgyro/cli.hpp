#pragma once

// Command-line front end: nvgyro <command> [--config PATH] [--seed U64]
// [--out PATH] [--format csv|jsonl] [--threads N].

#include <ostream>
#include <string>
#include <vector>

namespace nvgyro::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSchema = 3;
inline constexpr int kExitNotConverged = 4;

/// Runs one command. `args` excludes the program name. Data goes to `out`
/// unless --out is given; diagnostics go to `err`. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nvgyro::cli
