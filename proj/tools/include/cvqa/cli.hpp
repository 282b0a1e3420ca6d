#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cvqa/error.hpp"

namespace cvqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int exit_code_for(Errc code) noexcept;

/// Entry point behind the `cvqa` executable. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cvqa::cli
