#pragma once

namespace forcelab::cli {

/// Parses argv, runs the selected experiment, and writes its manifest and
/// result files. Exit codes: 0 success, 1 usage/validation error, 2 numeric
/// divergence.
int dispatch(int argc, const char* const* argv);

}  // namespace forcelab::cli
