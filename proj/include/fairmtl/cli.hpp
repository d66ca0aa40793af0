#pragma once

#include <iosfwd>

namespace fairmtl::cli {

// Entry point for the `fairmtl` tool. Returns 0 on success, 1 on I/O or data
// errors, 2 on usage errors.
int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fairmtl::cli
