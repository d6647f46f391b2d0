#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pwtp::cli {

/// Runs one subcommand. args excludes the program name.
/// Returns 0 on success, 1 on runtime errors, 2 on usage errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pwtp::cli
