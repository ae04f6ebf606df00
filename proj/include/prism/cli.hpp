#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace prism {

/// Exit statuses of the command line.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "PRISM_OUTPUT_ROOT";

/// Parses and runs one invocation. `args` excludes the program name. Every
/// command writes manifest.json under its output directory listing each
/// artifact with a content hash and the resolved config.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prism
