#pragma once

// The clipdetect command line: subcommands embed, train, eval, fewshot,
// llm-eval and report. Exit codes: 0 success, 2 usage or configuration,
// 3 numerical failure, 1 anything else.

#include <iosfwd>
#include <string>
#include <vector>

namespace clipdetect {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clipdetect
