#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ccdepth::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Parses and dispatches one command line (args[0] is the program name).
/// Returns 0 on success, 1 for invalid flags or configuration, 2 when the
/// command fails at run time.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace ccdepth::cli
