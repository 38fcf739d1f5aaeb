#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "itfr/trainer.hpp"

namespace itfr {

// Full entry point used by both the binary and the CLI tests.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args);

// One complete training run: train, checkpoint, log, validation report and
// manifest under out_dir. Shared by `train` and `sweep`.
void run_training(const TrainConfig& cfg, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out_dir);

}  // namespace itfr
