#pragma once

#include <iosfwd>

namespace fecil {

/// Entry point of the `fecil` tool. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage or config error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fecil
