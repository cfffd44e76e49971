#ifndef UPOOL_CLI_HPP
#define UPOOL_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "upool/errors.hpp"

namespace upool {

// 0 success, 2 usage or validation, 3 resource limit, 4 numeric failure.
int exit_code_for(ErrorKind kind);

// Runs the command line `args` (program name excluded). Output files are
// written only after every computation has succeeded.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace upool

#endif
