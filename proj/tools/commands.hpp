#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mergecap::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutDirEnv = "MERGECAP_OUT_DIR";

// Entry point shared by the executable and the tests. `args` excludes the
// program name. Returns the process exit code; 0 iff the command succeeded.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mergecap::cli
