#pragma once

// Command-line front end: train, verify, probe-consistency, probe-doob,
// probe-transition, ablate, report.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 a tolerance or
// assertion check failed.

#include <iosfwd>
#include <string>
#include <vector>

namespace aemlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitCheckFailed = 2;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version_tag();

}  // namespace aemlab
