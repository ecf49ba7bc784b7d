#pragma once

#include <iosfwd>
#include <string>

namespace latmap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBadInput = 3;
inline constexpr int kExitCheckFailed = 4;

/// Entry point of the `latmap` tool. Errors are reported on `err` as a single
/// line: `error: kind=<kind> message=<text>`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Top-level help followed by every subcommand's help.
std::string full_help();

}  // namespace latmap::cli
