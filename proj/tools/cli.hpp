#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "distilforge/model.hpp"
#include "distilforge/train.hpp"

namespace distilforge::cli {

// Process exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;       // bad flags, missing inputs, config parse errors
inline constexpr int kExitStale = 3;       // hash binding, integrity, container format
inline constexpr int kExitDivergence = 4;  // training blew up
inline constexpr int kExitPartialSweep = 5;

int run(int argc, char** argv);

int run_sweep_command(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir, int parallel);
int run_report_command(const std::vector<std::string>& eval_files, const std::vector<std::string>& sweep_files,
                       const std::filesystem::path& out_dir);

// Shared plumbing.
int exit_code_for(const std::exception& e);
std::filesystem::path resolve_out_dir(const std::string& flag_value, const std::string& subcommand);
nlohmann::json load_config_file(const std::filesystem::path& path);

ModelConfig merge_model_config(ModelConfig base, const nlohmann::json& j);
TrainConfig merge_train_config(TrainConfig base, const nlohmann::json& j);

}  // namespace distilforge::cli
