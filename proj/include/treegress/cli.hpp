#pragma once

#include <iosfwd>

namespace treegress {

/// Entry point of the `treegress` command line tool. Writes results to `out`
/// and one-line JSON diagnostics to `err`. Returns 0 on success, 2 for input
/// errors and 3 for runtime errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace treegress
