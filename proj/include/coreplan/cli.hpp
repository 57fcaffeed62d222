#pragma once

// Command-line front end. The subcommands live in the library so tests can
// drive them in-process; tools/coreplan_main.cpp is a thin wrapper.
//
// Exit codes: 0 success, 2 configuration or contract error, 3 integrity
// (instance hash) error.

#include <iosfwd>
#include <string>
#include <vector>

namespace coreplan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIntegrity = 3;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count for replicate-level parallelism: COREPLAN_THREADS when set
/// to a positive integer, else the hardware concurrency (at least 1).
unsigned worker_count();

}  // namespace coreplan::cli
