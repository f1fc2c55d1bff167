#include "fedrm/metrics.hpp"

namespace fedrm {

using nlohmann::ordered_json;

namespace {

ordered_json optional_array(const std::optional<std::vector<double>>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

}  // namespace

ordered_json round_to_json(const RoundRecord& r, const HyperGrid& grid) {
    ordered_json mu_raw = nullptr;
    if (r.mu_raw) {
        mu_raw = ordered_json::object();
        for (std::size_t d = 0; d < r.mu_raw->size(); ++d) mu_raw[grid.axis(d).name] = (*r.mu_raw)[d];
    }
    ordered_json clients = ordered_json::array();
    for (const auto& c : r.client_losses) {
        clients.push_back({{"client", c.client_id},
                           {"cross_entropy", c.final_loss.cross_entropy},
                           {"matching", c.final_loss.matching},
                           {"er", c.final_loss.er},
                           {"wd", c.final_loss.wd},
                           {"total", c.final_loss.total},
                           {"whole_shard_batch", c.whole_shard_batch}});
    }
    return ordered_json{
        {"schema_version", kSchemaVersion},
        {"round", r.round},
        {"clients", r.clients},
        {"learning_rate", r.hyper.learning_rate},
        {"sgd_iterations", r.hyper.sgd_iterations},
        {"h", optional_array(r.h)},
        {"mu", optional_array(r.mu)},
        {"mu_raw", mu_raw},
        {"log_precision", optional_array(r.log_precision)},
        {"loss_before", r.loss_before},
        {"loss_after", r.loss_after},
        {"reward", r.reward},
        {"client_losses", clients},
    };
}

ordered_json eval_to_json(std::size_t round, double accuracy) {
    return ordered_json{{"schema_version", kSchemaVersion}, {"round", round}, {"test_accuracy", accuracy}};
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
}

void JsonlWriter::write(const ordered_json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw Error("write failed on " + path_.string());
}

MetricsSink::MetricsSink(const std::filesystem::path& dir, bool record_timing)
    : rounds(dir / "rounds.jsonl"), evals(dir / "evals.jsonl") {
    if (record_timing) timings = JsonlWriter(dir / "timings.jsonl");
}

std::vector<ordered_json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string() + ": cannot open");
    std::vector<ordered_json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw FormatError(path.string() + ":" + std::to_string(n) + ": corrupt record");
        }
        if (!j.is_object() || j.value("schema_version", -1) != kSchemaVersion) {
            throw FormatError(path.string() + ":" + std::to_string(n) + ": missing or unsupported schema_version");
        }
        out.push_back(std::move(j));
    }
    return out;
}

ordered_json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string() + ": cannot open");
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const ordered_json& doc) {
    std::ofstream out(path, std::ios::out | std::ios::trunc);
    out << doc.dump(2) << '\n';
    if (!out) throw Error("write failed on " + path.string());
}

}  // namespace fedrm
