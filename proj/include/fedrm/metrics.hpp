#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "fedrm/fed_core.hpp"
#include <json.hpp>

namespace fedrm {

inline constexpr int kSchemaVersion = 1;

/// rounds.jsonl record. Wall time is left out so the file is reproducible.
nlohmann::ordered_json round_to_json(const RoundRecord& record, const HyperGrid& grid);
nlohmann::ordered_json eval_to_json(std::size_t round, double accuracy);

/// Append-only JSONL writer, flushed after every record.
class JsonlWriter {
public:
    JsonlWriter() = default;
    explicit JsonlWriter(const std::filesystem::path& path);

    void write(const nlohmann::ordered_json& record);
    bool is_open() const { return out_.is_open(); }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

struct MetricsSink {
    JsonlWriter rounds;
    JsonlWriter evals;
    JsonlWriter timings;  // only opened when timing is requested

    MetricsSink(const std::filesystem::path& dir, bool record_timing);
};

/// Reads every line of a JSONL file; throws FormatError naming the line on
/// corrupt records or an unexpected schema version.
std::vector<nlohmann::ordered_json> read_jsonl(const std::filesystem::path& path);

nlohmann::ordered_json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& doc);

}  // namespace fedrm
