#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace driftscope::cli {

// Runs one driftscope command. `args` excludes the program name. Returns the process
// exit code: 0 on success, 1 on a runtime failure, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace driftscope::cli
