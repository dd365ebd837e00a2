#pragma once

#include <string>
#include <vector>

namespace caps_ood::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericalError = 3;

// Runs the caps-ood command line. args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace caps_ood::cli
