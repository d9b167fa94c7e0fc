#pragma once

namespace magtable::cli {

/// Entry point of the command-line tool. Returns the process exit code:
/// 0 success, 2 usage or malformed input, 3 numeric or feasibility failure.
int run(int argc, char** argv);

}  // namespace magtable::cli
