// Command-line front end binding the library into runnable workflows. Exit
// codes are a fixed contract for scripting: 0 success, 2 bad config or input,
// 3 runtime failure (numeric faults, I/O, scorer), 4 threshold breach.

#pragma once

#include <string>
#include <vector>

namespace postrl {

// Runs one invocation; `args` excludes the program name. Never throws — every
// error is mapped onto the exit-code contract with a diagnostic on stderr.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace postrl
