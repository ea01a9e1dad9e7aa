#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace slanc::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;          // bad flags, unreadable or malformed files
inline constexpr int kDegenerateScale = 2;
inline constexpr int kNumerical = 3;      // non-finite or non-positive variance in a forward/scale computation
inline constexpr int kOverflowFound = 4;  // audit --fail-on-overflow

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

} // namespace slanc::cli
