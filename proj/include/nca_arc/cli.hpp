#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nca_arc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheckFailed = 3;

/// Entry point of the `nca-arc` tool. `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nca_arc
