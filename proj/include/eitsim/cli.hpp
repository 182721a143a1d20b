// cli.hpp: command-line front end: simulate, map, fit, check, presets.

#pragma once

#include "eitsim/io.hpp"

#include <string>
#include <vector>

namespace eitsim::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_config = 2,
    exit_engine = 3,
    exit_nonconvergence = 4,
};

/// Entry point used by the `eitsim` executable.
int run(int argc, const char* const* argv);

std::vector<std::string> preset_names();

/// Full simulate config of a figure preset (throws Error for unknown names).
io::Json preset_config(const std::string& name);

/// FNV-1a of the canonical config JSON with `workers` removed.
std::string config_hash(const io::Json& resolved);

}  // namespace eitsim::cli
