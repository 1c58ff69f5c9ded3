#pragma once

#include <iosfwd>

namespace msmbd::cli {

/// Exit codes: 0 success, 1 invalid configuration or input, 2 runtime
/// failure. Machine-readable output goes to `out`, progress and
/// diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace msmbd::cli
