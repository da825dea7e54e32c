#pragma once

#include <string>

namespace geoforge::cli {

// Entry point of the geoforge binary. Returns the process exit status:
// 0 success, 1 runtime error, 2 usage error.
int dispatch(int argc, const char* const* argv);

// Help for the top level and every subcommand, concatenated.
std::string help_text();

}  // namespace geoforge::cli
