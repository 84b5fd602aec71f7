#pragma once

namespace intervalic::cli {

/// Entry point behind main(). Exit codes: 0 success, 2 usage error,
/// 3 input-data error, 4 numerical failure, 5 I/O failure.
int run(int argc, const char* const* argv);

}  // namespace intervalic::cli
