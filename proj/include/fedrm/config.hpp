#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fedrm/fed_core.hpp"
#include <json.hpp>

namespace fedrm {

/// Invalid or unknown configuration entry. what() names the offending field.
class ConfigError : public Error {
public:
    ConfigError(const std::string& field, const std::string& message)
        : Error(field + ": " + message), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

enum class Task { mnist, cifar10, kws, synthetic };

std::string_view to_string(Task task);

struct DataConfig {
    std::string dir;           // mnist / cifar10
    std::string train_file;    // kws feature container
    std::string test_file;     // kws feature container
    std::size_t train_subset = 0;  // 0 keeps everything; else class-stratified subset
    std::size_t test_subset = 0;
};

struct SyntheticConfig {
    std::size_t classes = 10;
    std::size_t samples_per_class = 200;
    std::size_t test_per_class = 50;
    double separation = 3.0;
    double spread = 1.0;
};

struct ExperimentConfig {
    Task task = Task::synthetic;
    std::uint64_t seed = 0;
    DataConfig data;
    SyntheticConfig synthetic;
    PartitionMode partition = PartitionMode::iid;
    std::size_t validation_size = 1000;
    std::size_t repeats = 1;
    bool record_timing = false;
    std::filesystem::path output_dir;
    FedConfig fed;

    std::size_t num_classes() const { return task == Task::synthetic ? synthetic.classes : 10; }
};

/// Strict parse: unknown keys and invariant violations raise ConfigError.
ExperimentConfig parse_config(const nlohmann::ordered_json& doc);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

/// Fully populated JSON form (defaults filled in); parse_config(to_json(c))
/// reproduces c.
nlohmann::ordered_json to_json(const ExperimentConfig& config);

/// Hash of the echo with run-specific fields (seed, output_dir, repeats,
/// threads, record_timing) removed: equal hashes mean the same experiment.
std::string config_hash(const ExperimentConfig& config);

/// Short human label such as "mnist non_iid C=1 FA+RM+AH".
std::string config_label(const ExperimentConfig& config);

/// output_dir resolved against $FEDRM_OUTPUT_ROOT when it is relative.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

/// Loads and splits the task's data according to the config.
FederatedData load_task_data(const ExperimentConfig& config);

}  // namespace fedrm
