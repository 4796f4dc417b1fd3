#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace patchdev::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation or data error
inline constexpr int kExitUsage = 2;

// args[0] is the program name. Subcommands: validate, synth, fit, score,
// eval, sweep, heatmap.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args);

}  // namespace patchdev::cli
