#ifndef DDRNN_COMMANDS_HPP
#define DDRNN_COMMANDS_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace ddrnn {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFail = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitShape = 5,
};

/// Worker threads for evaluation, read from DDRNN_THREADS. Unset means 1.
/// Throws ConfigError for anything but a positive integer.
int eval_threads_from_env();

/// Entry point of the ddrnn tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddrnn

#endif  // DDRNN_COMMANDS_HPP
