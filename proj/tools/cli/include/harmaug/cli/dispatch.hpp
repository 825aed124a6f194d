#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace harmaug::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one `harmaug` subcommand. `args` excludes the program name.
/// Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
             std::ostream& err = std::cerr);

}  // namespace harmaug::cli
