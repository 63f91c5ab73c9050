#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace kfdiff {

// Runs one subcommand (gen-data | train | sample | evaluate | ablate).
// args excludes the program name. Failures print a single line
// "error: <category>: <message>" to err and return a non-zero code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::map<std::string, std::string>& env);

int exit_code_for(const std::string& category);

}  // namespace kfdiff
