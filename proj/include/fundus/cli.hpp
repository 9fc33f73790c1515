#ifndef FUNDUS_CLI_HPP
#define FUNDUS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace fundus {

/// Runs one `fundus_lab` invocation. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors and 1 on any other failure.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fundus

#endif
