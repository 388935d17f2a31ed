#pragma once

// Command-line front end: match, eval, synth and spectrum subcommands.

#include <ostream>
#include <string>
#include <vector>

namespace kmatch {

/// Exit codes: 0 success, 1 invalid input, 2 numeric failure.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitNumeric = 2 };

/// Runs one command line; args[0] is the program name. Errors go to `err`
/// as a single "error: ..." line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kmatch
