#pragma once

namespace mvlab::cli {

// Exit codes: 0 all checks passed, 1 usage or configuration error,
// 2 a check failed, 3 numerical breakdown.
int run(int argc, char** argv);

}  // namespace mvlab::cli
