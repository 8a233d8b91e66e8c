#pragma once

// The `lode` command line: gen-data, train, eval, predict, serve.

#include <iosfwd>
#include <string>
#include <vector>

namespace lode::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one invocation; `args` excludes the program name. Documents go to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lode::cli
