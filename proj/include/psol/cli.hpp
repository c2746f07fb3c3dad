#pragma once

#include <iosfwd>

namespace psol {

inline constexpr const char* kVersion = "1.0.0";

/// Entry point of the `psol` tool. Exit codes: 0 ok, 1 configuration error,
/// 2 data error, 3 internal error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace psol
