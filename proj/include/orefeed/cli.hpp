#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace orefeed::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kTrainingAbort = 3 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace orefeed::cli
