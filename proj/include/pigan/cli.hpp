#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pigan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `pigan` command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Every config key with its default and provenance note, one per line.
std::string config_help();

}  // namespace pigan::cli
