#pragma once

#include <ostream>

namespace dsn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one subcommand. Diagnostics go to `err`, tables and summaries to `out`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsn
