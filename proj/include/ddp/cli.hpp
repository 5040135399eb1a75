#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddp/config.hpp"

namespace ddp {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitIo = 3 };

/// Maps an exception to the command-line exit status.
int exit_code_for(const std::exception& e);

/// Trains and evaluates one run per value of `axis` (the steps axis trains
/// once and evaluates each value). Rows are in the order of `values`.
/// Throws ValidationError for an unknown axis or a value that yields an
/// invalid config, before any run starts.
nlohmann::json run_ablation(const ExperimentConfig& base, const std::string& axis,
                            const std::vector<std::string>& values, int jobs = 1, bool quiet = true);

/// Entry point of the `ddp` tool; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddp
