#include "fedrm/commands.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

#include "fedrm/metrics.hpp"

namespace fedrm {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

RunSummary run_once(const ExperimentConfig& config, const fs::path& dir, std::ostream* log) {
    fs::create_directories(dir);
    write_json_file(dir / "config.json", to_json(config));

    FederatedData data = load_task_data(config);
    MetricsSink sink(dir, config.record_timing);
    const HyperGrid grid(config.fed.tuner.axes);
    double last_loss = 0.0;
    const auto started = std::chrono::steady_clock::now();

    ExperimentCallbacks callbacks;
    callbacks.on_round = [&](const RoundRecord& r) {
        sink.rounds.write(round_to_json(r, grid));
        if (sink.timings.is_open()) {
            sink.timings.write(
                {{"schema_version", kSchemaVersion}, {"round", r.round}, {"wall_seconds", r.wall_seconds}});
        }
        last_loss = r.loss_after;
    };
    callbacks.on_eval = [&](std::size_t round, double acc) {
        sink.evals.write(eval_to_json(round, acc));
        if (log) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            *log << "[" << dir.filename().string() << "] round " << round << "/" << config.fed.rounds
                 << " test_accuracy=" << std::fixed << std::setprecision(4) << acc << " val_loss=" << last_loss
                 << " elapsed=" << std::setprecision(1) << elapsed << "s" << std::defaultfloat << std::endl;
        }
    };
    const ExperimentResult result = run_experiment(config.fed, std::move(data), callbacks);

    RunSummary s{dir, config.seed, result.final_accuracy, last_loss};
    write_json_file(dir / "summary.json", ordered_json{
                                              {"schema_version", kSchemaVersion},
                                              {"kind", "run"},
                                              {"config_hash", config_hash(config)},
                                              {"label", config_label(config)},
                                              {"seed", config.seed},
                                              {"rounds", config.fed.rounds},
                                              {"final_accuracy", s.final_accuracy},
                                              {"final_validation_loss", s.final_validation_loss},
                                          });
    return s;
}

}  // namespace

RunOutcome run_config(const ExperimentConfig& config, std::ostream* log) {
    RunOutcome out;
    out.dir = resolve_output_dir(config);
    fs::create_directories(out.dir);
    if (config.repeats == 1) {
        out.runs.push_back(run_once(config, out.dir, log));
    } else {
        write_json_file(out.dir / "config.json", to_json(config));
        for (std::size_t r = 0; r < config.repeats; ++r) {
            ExperimentConfig rep = config;
            rep.seed = config.seed + r;
            rep.fed.seed = rep.seed;
            rep.repeats = 1;
            out.runs.push_back(run_once(rep, out.dir / ("rep" + std::to_string(r)), log));
        }
    }
    std::vector<double> acc;
    for (const auto& r : out.runs) acc.push_back(r.final_accuracy);
    std::tie(out.mean_accuracy, out.std_accuracy) = mean_std(acc);
    if (config.repeats > 1) {
        ordered_json runs = ordered_json::array();
        for (const auto& r : out.runs) {
            runs.push_back({{"dir", r.dir.filename().string()}, {"seed", r.seed}, {"final_accuracy", r.final_accuracy}});
        }
        write_json_file(out.dir / "summary.json", ordered_json{
                                                      {"schema_version", kSchemaVersion},
                                                      {"kind", "repeats"},
                                                      {"config_hash", config_hash(config)},
                                                      {"label", config_label(config)},
                                                      {"runs", runs},
                                                      {"mean_accuracy", out.mean_accuracy},
                                                      {"std_accuracy", out.std_accuracy},
                                                  });
    }
    return out;
}

RunOutcome cmd_run(const fs::path& config_path, std::ostream* log) {
    return run_config(parse_config_file(config_path), log);
}

fs::path cmd_export_trajectory(const fs::path& run_dir) {
    const auto records = read_jsonl(run_dir / "rounds.jsonl");
    if (records.empty()) throw FormatError((run_dir / "rounds.jsonl").string() + ": no records");
    const fs::path path = run_dir / "trajectory.csv";
    std::ofstream out(path, std::ios::out | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "round,mu_learning_rate_raw,mu_sgd_iterations_raw,sampled_lr,sampled_iters,reward\n";
    // Numbers go through the JSON serializer so the CSV text matches rounds.jsonl exactly.
    const auto cell = [](const ordered_json& v) { return v.is_null() ? std::string() : v.dump(); };
    std::size_t line = 0;
    for (const auto& r : records) {
        ++line;
        try {
            const ordered_json& mu = r.at("mu_raw");
            const auto axis = [&](const std::string& name) {
                return mu.is_object() && mu.contains(name) ? cell(mu.at(name)) : std::string();
            };
            out << r.at("round").dump() << ',' << axis(kLearningRateAxis) << ',' << axis(kIterationsAxis) << ','
                << cell(r.at("learning_rate")) << ',' << cell(r.at("sgd_iterations")) << ',' << cell(r.at("reward"))
                << '\n';
        } catch (const nlohmann::json::exception&) {
            throw FormatError((run_dir / "rounds.jsonl").string() + ":" + std::to_string(line) +
                              ": record lacks trajectory fields");
        }
    }
    if (!out) throw Error("write failed on " + path.string());
    return path;
}

namespace {

struct RunEntry {
    std::string hash;
    std::string label;
    ordered_json config;  // echo without run-specific fields
    double accuracy = 0.0;
    fs::path dir;
};

ordered_json comparable_config(const fs::path& dir) {
    ordered_json c = read_json_file(dir / "config.json");
    for (const char* key : {"seed", "output_dir", "repeats", "threads", "record_timing"}) c.erase(key);
    return c;
}

void collect_run(const fs::path& dir, std::vector<RunEntry>& out) {
    if (!fs::exists(dir / "summary.json")) throw FormatError(dir.string() + ": no summary.json (run incomplete?)");
    const ordered_json s = read_json_file(dir / "summary.json");
    if (s.value("schema_version", -1) != kSchemaVersion) {
        throw FormatError(dir.string() + "/summary.json: unsupported schema_version");
    }
    const std::string kind = s.value("kind", "");
    if (kind == "repeats") {
        for (const auto& r : s.at("runs")) collect_run(dir / r.at("dir").get<std::string>(), out);
        return;
    }
    if (kind != "run") throw FormatError(dir.string() + "/summary.json: unknown kind '" + kind + "'");
    out.push_back(RunEntry{s.at("config_hash").get<std::string>(), s.at("label").get<std::string>(),
                           comparable_config(dir), s.at("final_accuracy").get<double>(), dir});
}

}  // namespace

std::vector<TableRow> collect_table(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.empty()) throw Error("table needs at least one run directory");
    std::vector<RunEntry> entries;
    for (const auto& d : run_dirs) collect_run(d, entries);

    std::vector<TableRow> rows;
    std::map<std::string, std::size_t> index;
    std::map<std::string, const RunEntry*> first;
    for (const auto& e : entries) {
        auto [it, inserted] = index.try_emplace(e.hash, rows.size());
        if (inserted) {
            rows.push_back(TableRow{e.hash, e.label, {}, 0.0, 0.0});
            first[e.hash] = &e;
        } else if (first[e.hash]->config != e.config) {
            throw Error("runs " + first[e.hash]->dir.string() + " and " + e.dir.string() +
                        " share config hash " + e.hash + " but their configs differ");
        }
        rows[it->second].accuracies.push_back(e.accuracy);
    }
    for (auto& row : rows) std::tie(row.mean, row.std) = mean_std(row.accuracies);
    return rows;
}

void print_table(const std::vector<TableRow>& rows, std::ostream& out) {
    out << "config_hash       runs  accuracy           label\n";
    for (const auto& r : rows) {
        out << r.config_hash << "  " << std::setw(4) << r.accuracies.size() << "  " << std::fixed
            << std::setprecision(4) << r.mean << " ± " << r.std << "  " << r.label << std::defaultfloat << '\n';
    }
}

}  // namespace fedrm
