#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace yolortho::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitModuleError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand (args excludes the program name). Failures print a
/// single "error: <Kind>: <message>" line to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace yolortho::cli
