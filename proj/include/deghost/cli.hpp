#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deghost/config.hpp"

namespace deghost {

// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumerical = 4,
    kExitStage = 5,
};

/// Environment variable naming the directory under which relative run dirs resolve.
inline constexpr const char* kRunRootEnv = "DEGHOST_RUN_ROOT";

std::filesystem::path resolve_run_dir(const std::string& run_dir);

/// Writes the synthetic dataset described by the synth.* keys: N unlabeled,
/// M static and K dynamic samples plus manifest.json, and num_test held-out
/// dynamic samples under test/. Returns the output directory.
std::filesystem::path write_synth_dataset(const RunConfig& cfg);

/// Entry point of the `deghost` tool; returns an ExitCode.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace deghost
