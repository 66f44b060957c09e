#pragma once

#include <iosfwd>

namespace liitr {

enum ExitCode : int {
  kExitOk = 0,
  kExitPartialFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitUsage = 4,
};

// Entry point of the liitr executable. Subcommands: simulate, fit-blackbox,
// fit-vae, explain, evaluate, benchmark.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace liitr
