#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedrm/config.hpp"

namespace fedrm {

struct RunSummary {
    std::filesystem::path dir;
    std::uint64_t seed = 0;
    double final_accuracy = 0.0;
    double final_validation_loss = 0.0;
};

struct RunOutcome {
    std::filesystem::path dir;  // top-level output directory
    std::vector<RunSummary> runs;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // sample std, 0 for a single run
};

/// Runs the experiment `repeats` times with seeds seed, seed+1, ... A single
/// run writes straight into the output directory; repeats go to rep<i>/.
/// Progress lines go to `log` when given.
RunOutcome run_config(const ExperimentConfig& config, std::ostream* log = nullptr);
RunOutcome cmd_run(const std::filesystem::path& config_path, std::ostream* log = nullptr);

/// Writes <run_dir>/trajectory.csv and returns its path.
std::filesystem::path cmd_export_trajectory(const std::filesystem::path& run_dir);

struct TableRow {
    std::string config_hash;
    std::string label;
    std::vector<double> accuracies;
    double mean = 0.0;
    double std = 0.0;
};

/// Groups completed runs by config hash. Directories holding repeats are
/// expanded into their individual runs.
std::vector<TableRow> collect_table(const std::vector<std::filesystem::path>& run_dirs);
void print_table(const std::vector<TableRow>& rows, std::ostream& out);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace fedrm
