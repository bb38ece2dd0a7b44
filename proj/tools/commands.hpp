#pragma once

#include <ostream>

namespace groupflow::cli {

/// Parses and runs one command. Returns the process exit code: 0 on success,
/// 1 on runtime or numeric failure, 2 on usage or input errors. Failures are
/// reported on err as {"error": {"kind": ..., "message": ...}}.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace groupflow::cli
