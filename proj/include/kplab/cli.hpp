#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kplab {

// Runs one kplab subcommand. Exit codes: 0 success, 1 usage error, 2 runtime
// failure. args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

}  // namespace kplab
