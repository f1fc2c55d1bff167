// Acceptance suite: one PASS/FAIL line per criterion, on stdout and in
// DIR/report.txt.
//
//   acceptance [--only 1,2,...] [--out DIR]
//
// MNIST is read from $FEDRM_MNIST_DIR (default: the configure-time path).
// CIFAR-10 is read from $FEDRM_CIFAR_DIR when set; otherwise the CIFAR smoke
// run uses a synthetic CIFAR-shaped surrogate written in the CIFAR binary
// format, and says so on its line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "fedrm/commands.hpp"
#include "fedrm/metrics.hpp"
#include "support/bandit.hpp"
#include "support/composite.hpp"

using namespace fedrm;
using namespace fedrm::testing;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Criteria that fail for reasons recorded in README.md ("Known failures").
// They still print FAIL; they do not fail the process.
const std::set<int> kDocumentedFailures = {2, 6, 10};

fs::path g_out;
std::string g_mnist;
std::string g_cifar;

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

bool mnist_available() {
    return fs::exists(fs::path(g_mnist) / "train-images-idx3-ubyte") &&
           fs::exists(fs::path(g_mnist) / "t10k-labels-idx1-ubyte");
}

ordered_json mnist_config(const std::string& name, std::uint64_t seed) {
    return {{"task", "mnist"},
            {"seed", seed},
            {"data", {{"dir", g_mnist}}},
            {"T", 200},
            {"eval_every", 20},
            {"output_dir", (g_out / name).string()}};
}

struct Timed {
    RunOutcome outcome;
    double seconds = 0.0;
};

Timed run(const ordered_json& doc) {
    const auto t0 = std::chrono::steady_clock::now();
    Timed t{run_config(parse_config(doc), &std::cerr), 0.0};
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return t;
}

// ------------------------------------------------------------ MNIST runs

// Non-iid FA+AH, three seeds; shared by criteria 2 and 4.
const RunOutcome& fa_ah_non_iid() {
    static std::optional<RunOutcome> cached;
    if (!cached) {
        ordered_json doc = mnist_config("mnist-non_iid-fa_ah", 1);
        doc["partition"] = "non_iid";
        doc["algorithm"] = {{"use_ah", true}};
        doc["repeats"] = 3;
        cached = run(doc).outcome;
    }
    return *cached;
}

Outcome criterion1() {
    if (!mnist_available()) return {false, "MNIST not found in " + g_mnist};
    ordered_json doc = mnist_config("mnist-iid-fa", 1);
    doc["partition"] = "iid";
    doc["schedule"] = {{"initial_lr", 0.1}, {"iterations", 50}};
    const Timed t = run(doc);
    const double acc = t.outcome.runs[0].final_accuracy;
    return {acc >= 0.970 && t.seconds <= 45 * 60,
            "MNIST iid FA T=200: accuracy " + fmt(acc) + " (>= 0.9700), wall " + fmt(t.seconds, 0) +
                " s (<= 2700 s)"};
}

Outcome criterion2() {
    if (!mnist_available()) return {false, "MNIST not found in " + g_mnist};
    const RunOutcome& r = fa_ah_non_iid();
    double lo = 1.0;
    std::string each;
    for (const auto& s : r.runs) {
        lo = std::min(lo, s.final_accuracy);
        each += (each.empty() ? "" : ", ") + fmt(s.final_accuracy);
    }
    return {r.mean_accuracy >= 0.930 && lo >= 0.80,
            "MNIST non-iid FA+AH T=200, seeds 1-3: mean " + fmt(r.mean_accuracy) + " (>= 0.9300), runs [" + each +
                "], min " + fmt(lo) + " (>= 0.80)"};
}

double rm_accuracy(const std::string& name, const std::string& reduction) {
    ordered_json doc = mnist_config(name, 1);
    doc["partition"] = "non_iid";
    doc["algorithm"] = {{"use_rm", true}};
    doc["loss"] = {{"matching_reduction", reduction}};
    doc["schedule"] = {{"initial_lr", 0.4}, {"iterations", 10}};
    return run(doc).outcome.runs[0].final_accuracy;
}

Outcome criterion3() {
    if (!mnist_available()) return {false, "MNIST not found in " + g_mnist};
    const double acc = rm_accuracy("mnist-non_iid-fa_rm", "mean");
    return {acc >= 0.920, "MNIST non-iid FA+RM T=200 (per-unit mean matching): accuracy " + fmt(acc) + " (>= 0.9200)"};
}

std::string criterion3_note() {
    if (!mnist_available()) return "";
    ordered_json doc = mnist_config("mnist-non_iid-fa_rm-sum", 1);
    doc["partition"] = "non_iid";
    doc["algorithm"] = {{"use_rm", true}};
    doc["schedule"] = {{"initial_lr", 0.01}, {"iterations", 10}};
    const double acc = run(doc).outcome.runs[0].final_accuracy;
    return "same task with summed matching (the default reduction), lr 0.01, 10 iterations: accuracy " + fmt(acc);
}

Outcome criterion4() {
    if (!mnist_available()) return {false, "MNIST not found in " + g_mnist};
    const RunOutcome& r = fa_ah_non_iid();
    int below = 0;
    std::string each;
    for (const auto& s : r.runs) {
        std::ifstream csv(cmd_export_trajectory(s.dir));
        std::string header, line, first, last;
        std::getline(csv, header);
        while (std::getline(csv, line)) {
            if (first.empty()) first = line;
            last = line;
        }
        const auto mu = [](const std::string& row) {
            const auto a = row.find(',');
            return std::stod(row.substr(a + 1, row.find(',', a + 1) - a - 1));
        };
        const double m0 = mu(first), m1 = mu(last);
        if (m1 < m0) ++below;
        each += (each.empty() ? "" : ", ") + fmt(m0) + "->" + fmt(m1);
    }
    return {below >= 2, "learning-rate mu ends below its start in " + std::to_string(below) + "/3 seeds (>= 2): [" +
                            each + "]"};
}

// ------------------------------------------------------------ CIFAR smoke

// CIFAR-shaped stand-in, written in the CIFAR binary format: each class is a
// smooth template (a random 4x4 colour pattern, bilinearly upsampled) plus
// per-pixel noise, quantized to bytes. 5 x 1000 training records, 1000 test.
void write_cifar_surrogate(const fs::path& dir) {
    fs::create_directories(dir);
    constexpr std::size_t side = 32, coarse = 4, per = 3 * side * side;
    Rng rng(500);
    std::vector<std::vector<double>> templates(10, std::vector<double>(per));
    for (auto& t : templates) {
        std::vector<double> grid(3 * coarse * coarse);
        for (double& g : grid) g = 0.3 * rng.normal();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x) {
                    const double gy = (y + 0.5) * coarse / side - 0.5, gx = (x + 0.5) * coarse / side - 0.5;
                    const auto y0 = static_cast<std::size_t>(std::clamp(std::floor(gy), 0.0, coarse - 2.0));
                    const auto x0 = static_cast<std::size_t>(std::clamp(std::floor(gx), 0.0, coarse - 2.0));
                    const double fy = std::clamp(gy - y0, 0.0, 1.0), fx = std::clamp(gx - x0, 0.0, 1.0);
                    const auto at = [&](std::size_t yy, std::size_t xx) { return grid[(c * coarse + yy) * coarse + xx]; };
                    t[(c * side + y) * side + x] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                                   fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                }
    }
    for (int f = 0; f < 6; ++f) {
        std::ofstream out(dir / (f < 5 ? "data_batch_" + std::to_string(f + 1) + ".bin" : "test_batch.bin"),
                          std::ios::binary);
        for (std::size_t r = 0; r < 1000; ++r) {
            const auto label = static_cast<std::size_t>(rng.below(10));
            out.put(static_cast<char>(label));
            for (std::size_t k = 0; k < per; ++k) {
                const double v = std::clamp(0.5 + templates[label][k] + 0.1 * rng.normal(), 0.0, 1.0);
                out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
            }
        }
    }
}

Outcome criterion5a() {
    std::string dir = g_cifar;
    std::string source = "CIFAR-10 from " + dir;
    if (dir.empty() || !fs::exists(fs::path(dir) / "data_batch_1.bin")) {
        dir = (g_out / "cifar-surrogate").string();
        write_cifar_surrogate(dir);
        source = "SYNTHETIC CIFAR-shaped surrogate (real CIFAR-10 not available)";
    }
    const ordered_json doc = {{"task", "cifar10"},
                              {"seed", 1},
                              {"data", {{"dir", dir}, {"train_subset", 5000}, {"test_subset", 1000}}},
                              {"partition", "non_iid"},
                              {"validation_size", 500},
                              {"algorithm", {{"use_rm", true}}},
                              {"loss", {{"matching_reduction", "mean"}}},
                              {"T", 20},
                              {"eval_every", 20},
                              {"batch_size", 32},
                              {"schedule", {{"initial_lr", 0.05}, {"iterations", 10}}},
                              {"output_dir", (g_out / "cifar-non_iid-fa_rm").string()}};
    const Timed t = run(doc);
    const auto rounds = read_jsonl(t.outcome.runs[0].dir / "rounds.jsonl");
    const double l1 = rounds.front().at("loss_before").get<double>();
    const double after1 = rounds.front().at("loss_after").get<double>();
    const double l21 = rounds.back().at("loss_after").get<double>();
    const double drop = (l1 - l21) / l1;
    return {drop >= 0.20, source + ", 5000 samples, 20 rounds FA+RM non-iid: validation loss " + fmt(l1) + " -> " +
                              fmt(l21) + ", drop " + fmt(100 * drop, 1) + "% (>= 20%); after round 1 " + fmt(after1) +
                              ", drop from there " + fmt(100 * (after1 - l21) / after1, 1) + "%; wall " +
                              fmt(t.seconds, 0) + " s"};
}

Outcome criterion5b() {
    LossConfig rm;
    rm.use_matching = true;
    rm.h_min = 5.0;  // keeps the entropy hinge active so its gradient is exercised
    LossConfig rm_mean = rm;
    rm_mean.matching_reduction = MatchingReduction::mean;
    LossConfig wd;
    wd.use_wd = true;
    wd.h_min = 5.0;
    bool ok = true;
    std::string detail;
    std::uint64_t seed = 70;
    for (ArchId id : {ArchId::mnist_mlp, ArchId::cifar_cnn, ArchId::kws_cnn}) {
        for (const auto& [name, cfg] : {std::pair{"RM", rm}, std::pair{"RM-mean", rm_mean}, std::pair{"WD", wd}}) {
            GradFixture f = make_fixture(build_arch(id), 2, seed++);
            const GradCheckResult r = check_composite(f, cfg, 12);
            const bool pass = r.passed(1e-5) && r.checked >= 50;
            ok = ok && pass;
            detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(id)) + "/" + name + " " +
                      std::to_string(r.checked) + " probes max rel " + fmt(r.max_rel_error * 1e6, 3) + "e-6" +
                      " (" + std::to_string(r.skipped) + " kinks skipped, " + std::to_string(r.below_resolution) +
                      " below rounding floor)";
        }
    }
    return {ok, "composite-loss FD, batch 2, tol 1e-5, >= 50 probes each: " + detail};
}

// ------------------------------------------------------------ tuner

const std::vector<double> kOptimumIndex = {1, 3};

std::vector<double> optimum(const HyperGrid& g) {
    return {g.axis(0).coords[1], g.axis(1).coords[3]};
}

Outcome criterion6() {
    const HyperGrid g(TunerConfig::default_axes());
    const HyperDist d = HyperDist::centered(2, 0.2);
    const auto h_star = optimum(g);
    const auto exact = exact_reward_gradient(g, d, h_star);
    const auto p = grid_probs(g, d);
    double b = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) b += p[i] * bandit_reward(g.coords(i), h_star);
    Rng rng = Rng::derive(6, StreamTag::test);
    const int n = 100000;
    std::vector<double> mean(4, 0.0), sq(4, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto s = sample(g, d, rng);
        const auto sc = score(g, d, s.point);
        const double r = bandit_reward(s.coords, h_star);
        for (std::size_t k = 0; k < 4; ++k) {
            const double v = (r - b) * sc[k];
            mean[k] += v / n;
            sq[k] += v * v / n;
        }
    }
    const char* names[] = {"mu_lr", "mu_iters", "logA_lr", "logA_iters"};
    bool ok = true;
    std::string detail;
    for (std::size_t k = 0; k < 4; ++k) {
        const double rel = relative_error(mean[k], exact[k]);
        const double se = std::sqrt((sq[k] - mean[k] * mean[k]) / n);
        ok = ok && rel < 0.02;
        detail += std::string(k ? "; " : "") + names[k] + " rel " + fmt(100 * rel, 2) + "% (z " +
                  fmt((mean[k] - exact[k]) / se, 2) + ", 1 SE = " + fmt(100 * se / std::abs(exact[k]), 2) + "%)";
    }
    return {ok, "1e5 single-sample directions vs exact gradient, 6x6 grid, tol 2% per component: " + detail};
}

Outcome criterion7() {
    const HyperGrid g(TunerConfig::default_axes());
    Rng rng(7);
    double sum_err = 0.0, score_mean = 0.0, fd_err = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        HyperDist d;
        for (int k = 0; k < 2; ++k) {
            d.mu.push_back(rng.uniform(-0.5, 0.5));
            d.log_precision.push_back(rng.uniform(-1.0, 6.0));
        }
        const auto p = grid_probs(g, d);
        sum_err = std::max(sum_err, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
        std::vector<double> e(4, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto s = score(g, d, i);
            for (std::size_t k = 0; k < 4; ++k) e[k] += p[i] * s[k];
        }
        for (double v : e) score_mean = std::max(score_mean, std::abs(v));
        const std::size_t point = static_cast<std::size_t>(rng.below(g.size()));
        const auto analytic = score(g, d, point);
        for (std::size_t k = 0; k < 4; ++k) {
            HyperDist plus = d, minus = d;
            (k < 2 ? plus.mu[k] : plus.log_precision[k - 2]) += 1e-5;
            (k < 2 ? minus.mu[k] : minus.log_precision[k - 2]) -= 1e-5;
            const double numeric =
                (std::log(grid_probs(g, plus)[point]) - std::log(grid_probs(g, minus)[point])) / 2e-5;
            fd_err = std::max(fd_err, relative_error(analytic[k], numeric, 1e-6));
        }
    }
    std::ostringstream s;
    s << std::scientific << std::setprecision(2) << "100 random (mu, A): max |sum p - 1| " << sum_err
      << " (< 1e-12), max |E[score]| " << score_mean << " (< 1e-10), max score FD rel err " << fd_err << " (< 1e-6)";
    return {sum_err < 1e-12 && score_mean < 1e-10 && fd_err < 1e-6, s.str()};
}

// ------------------------------------------------------------ aggregation, determinism

ParamSet scalar(double v) {
    ParamSet p;
    p.add(0, "w", Tensor({1}, std::vector<double>{v}));
    return p;
}

Outcome criterion8() {
    const ParamSet w0 = scalar(0.0), one = scalar(1.0), two = scalar(2.0), three = scalar(3.0);
    const auto val = [](const ParamSet& p) { return p.get(0, "w")[0]; };
    const std::vector<WeightedUpdate> equal{{&one, 5}, {&three, 5}}, weighted{{&one, 1}, {&three, 3}},
        damped{{&two, 5}};
    const double a = val(aggregate(w0, equal, 10, AggregationMode::literal));
    const double b = val(aggregate(w0, weighted, 4, AggregationMode::literal));
    const double c = val(aggregate(w0, damped, 10, AggregationMode::literal));

    const ModelArch arch = build_arch(ArchId::mnist_mlp);
    Rng rng(8);
    const ParamSet w = init_params(arch.graph, rng);
    std::vector<ParamSet> locals;
    std::vector<WeightedUpdate> all;
    const std::vector<std::size_t> sizes{5421, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949};
    for (std::size_t i = 0; i < sizes.size(); ++i) locals.push_back(init_params(arch.graph, rng));
    std::size_t total = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        all.push_back({&locals[i], sizes[i]});
        total += sizes[i];
    }
    const ParamSet lit = aggregate(w, all, total, AggregationMode::literal);
    const bool bitwise = aggregate(w, all, total, AggregationMode::renormalized) == lit;
    // Hand evaluation of w + sum (n_k / N)(w_k - w) on the first and last coordinate of every tensor.
    double worst = 0.0;
    for (const auto& e : w.entries()) {
        for (std::size_t k : {std::size_t{0}, e.value.size() - 1}) {
            double expect = e.value[k];
            for (std::size_t i = 0; i < sizes.size(); ++i)
                expect += static_cast<double>(sizes[i]) / static_cast<double>(total) *
                          (locals[i].get(e.layer, e.name)[k] - e.value[k]);
            worst = std::max(worst, std::abs(lit.get(e.layer, e.name)[k] - expect));
        }
    }
    const bool ok = a == 2.0 && b == 2.5 && c == 1.0 && bitwise && worst < 1e-14;
    return {ok, "[1],[3] equal -> " + fmt(a, 3) + " (2); n=(1,3) -> " + fmt(b, 3) + " (2.5); one of two at C=0.5 -> " +
                    fmt(c, 3) + " (1); mnist layout hand max |diff| " + fmt(worst * 1e15, 2) +
                    "e-15; renormalized == literal at C=1 bitwise: " + (bitwise ? "yes" : "no")};
}

Outcome criterion9() {
    ordered_json base = {{"seed", 9},
                         {"algorithm", {{"use_ah", true}, {"use_rm", true}}},
                         {"C", 0.5},
                         {"T", 6},
                         {"eval_every", 3},
                         {"batch_size", 32},
                         {"tuner",
                          {{"grid",
                            {{{"name", "learning_rate"}, {"values", {0.01, 0.05, 0.1}}},
                             {{"name", "sgd_iterations"}, {"values", {2, 4, 8}}}}}}}};
    if (mnist_available()) {
        base["task"] = "mnist";
        base["data"] = {{"dir", g_mnist}, {"train_subset", 3000}, {"test_subset", 500}};
        base["validation_size"] = 300;
        base["partition"] = "non_iid";
    } else {
        base["task"] = "synthetic";
    }
    std::vector<std::string> files;
    for (const auto& [name, threads] : {std::pair{"a", 1}, std::pair{"b", 1}, std::pair{"threads", 4}}) {
        ordered_json doc = base;
        doc["threads"] = threads;
        doc["output_dir"] = (g_out / ("determinism-" + std::string(name))).string();
        const RunOutcome r = run_config(parse_config(doc));
        std::ifstream in(r.runs[0].dir / "rounds.jsonl", std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        files.push_back(s.str());
    }
    const bool rerun = files[0] == files[1];
    const bool threaded = files[0] == files[2];
    return {rerun && threaded && !files[0].empty(),
            std::string(base["task"].get<std::string>()) + " FA+RM+AH C=0.5, 6 rounds: rerun byte-identical: " +
                (rerun ? "yes" : "no") + "; 4 worker threads vs serial byte-identical: " + (threaded ? "yes" : "no")};
}

// ------------------------------------------------------------ toy bandit

Outcome criterion10() {
    const HyperGrid g(TunerConfig::default_axes());
    const auto h_star = optimum(g);
    int hits = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const BanditRun r = run_bandit(g, h_star, seed, 2000);
        const double cells = cells_from_optimum(g, r.final_dist, h_star);
        if (cells <= 1.0) ++hits;
        detail += std::string(seed > 1 ? ", " : "") + fmt(cells, 2);
    }
    return {hits >= 4, "default eta_h 0.1, Z 10, 6x6 grid, 2000 rounds: " + std::to_string(hits) +
                           "/5 seeds within one cell (>= 4); distance in cells [" + detail + "]"};
}

std::string criterion10_note() {
    const HyperGrid g(TunerConfig::default_axes());
    const auto h_star = optimum(g);
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TunerUpdateOptions opt;
        opt.eta_h = 0.01;
        if (cells_from_optimum(g, run_bandit(g, h_star, seed, 2000, 10, opt).final_dist, h_star) <= 1.0) ++hits;
    }
    return "same bandit at eta_h 0.01: " + std::to_string(hits) + "/5 seeds within one cell";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedrm acceptance suite"};
    std::vector<int> only;
    std::string out = FEDRM_ACCEPTANCE_OUT;
    app.add_option("--only", only, "Run only these criteria (5 runs both 5a and 5b)")->delimiter(',');
    app.add_option("--out", out, "Directory for run outputs");
    CLI11_PARSE(app, argc, argv);

    g_out = env_or("FEDRM_ACCEPTANCE_OUT", out);
    g_mnist = env_or("FEDRM_MNIST_DIR", FEDRM_MNIST_DIR);
    g_cifar = env_or("FEDRM_CIFAR_DIR", FEDRM_CIFAR_DIR);
    fs::create_directories(g_out);

    struct Criterion {
        int number;
        std::string label;
        std::function<Outcome()> check;
        std::function<std::string()> note;
    };
    const std::vector<Criterion> criteria = {
        {1, "1", criterion1, nullptr},       {2, "2", criterion2, nullptr},
        {3, "3", criterion3, criterion3_note}, {4, "4", criterion4, nullptr},
        {5, "5a", criterion5a, nullptr},     {5, "5b", criterion5b, nullptr},
        {6, "6", criterion6, nullptr},       {7, "7", criterion7, nullptr},
        {8, "8", criterion8, nullptr},       {9, "9", criterion9, nullptr},
        {10, "10", criterion10, criterion10_note},
    };

    std::ofstream report(g_out / "report.txt");
    const auto emit = [&](const std::string& line) {
        std::cout << line << std::endl;
        report << line << '\n' << std::flush;
    };

    int unexpected = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const bool documented = !o.pass && kDocumentedFailures.count(c.number);
        emit("criterion " + c.label + ": " + (o.pass ? "PASS" : "FAIL") + (documented ? " (documented)" : "") + "  " +
             o.detail);
        if (c.note) {
            try {
                if (const std::string n = c.note(); !n.empty()) emit("  note: " + n);
            } catch (const std::exception& e) {
                emit(std::string("  note: error: ") + e.what());
            }
        }
        if (!o.pass && !documented) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
