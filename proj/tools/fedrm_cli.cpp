// Command-line front end: run, export-trajectory, table.
#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "fedrm/commands.hpp"

namespace {

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning with representation matching and adaptive hyper-parameters"};
    app.require_subcommand(1);

    std::string config_path;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
    run->add_option("config", config_path, "Config file")->required();
    run->add_flag("-q,--quiet", quiet, "No progress output");

    std::string run_dir;
    auto* traj = app.add_subcommand("export-trajectory", "Write trajectory.csv for a run directory");
    traj->add_option("run_dir", run_dir, "Run directory")->required();

    std::vector<std::string> dirs;
    auto* table = app.add_subcommand("table", "Aggregate final accuracies by config");
    table->add_option("run_dirs", dirs, "Run directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (run->parsed()) {
            const auto outcome = fedrm::cmd_run(config_path, quiet ? nullptr : &std::cerr);
            std::cout << outcome.dir.string() << " final_accuracy=" << outcome.mean_accuracy;
            if (outcome.runs.size() > 1) std::cout << " std=" << outcome.std_accuracy;
            std::cout << '\n';
        } else if (traj->parsed()) {
            std::cout << fedrm::cmd_export_trajectory(run_dir).string() << '\n';
        } else if (table->parsed()) {
            std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
            fedrm::print_table(fedrm::collect_table(paths), std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "fedrm: error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
