// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "adanas/errors.hpp"

namespace adanas::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitTraining = 4;

int exit_code(ErrorCategory category) noexcept;

/// Parses the arguments and runs one command. Errors are reported on stderr
/// as a single `error: category=<name> message=<text>` line.
int run(int argc, const char* const* argv);

}  // namespace adanas::cli
