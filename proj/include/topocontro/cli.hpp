#pragma once

#include <iosfwd>
#include <string_view>

namespace topocontro {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Entry point of the `topocontro` binary. Returns the process exit code:
/// 0 on success, 2 when an upstream artifact is missing, 1 for other errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace topocontro
