#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nlcr::app {

inline constexpr int exit_ok = 0;
inline constexpr int exit_check_failed = 1;
inline constexpr int exit_input = 2;
inline constexpr int exit_numerical = 3;

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nlcr::app
