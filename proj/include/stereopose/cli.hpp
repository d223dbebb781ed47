#pragma once

#include <string>
#include <vector>

namespace stereopose {

// Entry point behind the `stereopose` binary. Exit codes: 0 success, 1 usage
// error, 2 data error, 3 numeric failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace stereopose
