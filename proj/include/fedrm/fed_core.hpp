#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedrm/data_io.hpp"
#include "fedrm/hyper_tuner.hpp"
#include "fedrm/losses.hpp"
#include "fedrm/model_zoo.hpp"

namespace fedrm {

enum class AggregationMode {
    literal,       // w + sum_{i in S} (n_i / N) (w_i - w)
    renormalized,  // weights n_i / sum_{j in S} n_j
};

std::string_view to_string(AggregationMode mode);

struct HyperValues {
    double learning_rate = 0.0;
    std::size_t sgd_iterations = 0;
};

inline const std::string kLearningRateAxis = "learning_rate";
inline const std::string kIterationsAxis = "sgd_iterations";

/// Piecewise-constant learning-rate decay with a constant iteration count:
/// lr(t) = initial_lr * decay_factor^floor((t - 1) / decay_every).
struct FixedSchedule {
    double initial_lr = 0.05;
    double decay_factor = 0.5;
    std::size_t decay_every = 0;  // 0 means max(1, T / 3)
    std::size_t iterations = 20;

    HyperValues at(std::size_t round, std::size_t total_rounds) const;
};

struct TunerConfig {
    std::vector<GridAxis> axes = default_axes();
    std::size_t window_radius = 10;  // Z
    double eta_h = 0.1;
    double init_std = 0.2;
    bool freeze_precision = false;
    double update_sign = 1.0;

    static std::vector<GridAxis> default_axes();
    /// Default grid with the iteration axis capped for small datasets.
    static std::vector<GridAxis> kws_axes();
};

struct FedConfig {
    ArchId arch = ArchId::mnist_mlp;
    bool match_input = true;
    LossConfig loss;
    bool use_ah = false;
    AggregationMode aggregation = AggregationMode::literal;
    std::size_t clients = 10;  // K
    double fraction = 1.0;     // C
    std::size_t rounds = 200;  // T
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    TunerConfig tuner;
    FixedSchedule schedule;
    std::size_t eval_every = 10;  // E
    std::size_t threads = 1;
};

struct ClientState {
    std::size_t id = 0;
    Dataset shard;
    DecoderParams theta;

    std::size_t size() const noexcept { return shard.size(); }
};

struct ServerState {
    ParamSet w;
    HyperGrid grid;
    HyperDist dist;
    RewardWindow window;
    Dataset validation;
    std::size_t round = 1;         // t of the next round to run
    std::size_t total_points = 0;  // N
    double loss = 0.0;             // L_t for the current w
};

struct ClientReport {
    std::size_t client_id = 0;
    LossBreakdown final_loss;  // loss on the last minibatch, before its step
    bool whole_shard_batch = false;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> clients;
    HyperValues hyper;
    std::optional<std::vector<double>> h;             // normalized sample, tuner only
    double loss_before = 0.0;
    double loss_after = 0.0;
    double reward = 0.0;
    std::optional<std::vector<double>> mu;            // normalized mean at sampling time
    std::optional<std::vector<double>> mu_raw;        // same, in raw units per axis
    std::optional<std::vector<double>> log_precision;
    std::vector<ClientReport> client_losses;
    double wall_seconds = 0.0;
};

/// Client shards plus the server's held-out data.
struct FederatedData {
    std::vector<Dataset> shards;
    Dataset validation;
    Dataset test;
    std::size_t num_classes = 10;
};

/// Holds out a class-stratified validation set, then partitions the rest.
FederatedData prepare_federated_data(const Dataset& train_pool, Dataset test, std::size_t clients,
                                     PartitionMode mode, std::size_t validation_size, std::uint64_t seed,
                                     std::size_t num_classes = 10);

/// round(C * K) distinct ids in increasing order.
std::vector<std::size_t> select_clients(std::size_t clients, double fraction, Rng& rng);

struct ClientUpdate {
    ParamSet w_local;
    ClientReport report;
};

/// Local SGD on the composite loss for h.sgd_iterations minibatches. The
/// client's theta is updated in place and persists across rounds.
ClientUpdate train_client(const ModelArch& arch, const MatchingDecoder& decoder, ClientState& client,
                          const ParamSet& w_round, const HyperValues& h, const FedConfig& config, Rng& rng);

struct WeightedUpdate {
    const ParamSet* w_local = nullptr;
    std::size_t points = 0;  // n_k
};

/// Updates are reduced in the order given; callers sort them by client id.
ParamSet aggregate(const ParamSet& w_round, std::span<const WeightedUpdate> updates, std::size_t total_points,
                   AggregationMode mode);

/// Mean cross-entropy of the model on `data` (inference only).
double evaluate_loss(const ModelArch& arch, const ParamSet& w, const Dataset& data);
double evaluate_accuracy(const ModelArch& arch, const ParamSet& w, const Dataset& data);

/// One federated run: architecture, decoder, server and clients.
class Federation {
public:
    Federation(FedConfig config, FederatedData data);

    const FedConfig& config() const noexcept { return config_; }
    const ModelArch& arch() const noexcept { return arch_; }
    const MatchingDecoder& decoder() const noexcept { return decoder_; }
    const ServerState& server() const noexcept { return server_; }
    ServerState& server() noexcept { return server_; }
    const std::vector<ClientState>& clients() const noexcept { return clients_; }
    const Dataset& test_set() const noexcept { return test_; }

    /// Raw hyper-parameters for round t when the tuner is off.
    HyperValues scheduled(std::size_t round) const;

    RoundRecord run_round();

    double test_accuracy() const;

private:
    FedConfig config_;
    ModelArch arch_;
    MatchingDecoder decoder_;
    ServerState server_;
    std::vector<ClientState> clients_;
    Dataset test_;
};

struct ExperimentResult {
    std::vector<RoundRecord> records;
    ParamSet final_w;
    double final_accuracy = 0.0;
};

struct ExperimentCallbacks {
    std::function<void(const RoundRecord&)> on_round;
    std::function<void(std::size_t round, double accuracy)> on_eval;
};

/// T rounds with test accuracy at round 0 and every E rounds.
ExperimentResult run_experiment(const FedConfig& config, FederatedData data, const ExperimentCallbacks& callbacks = {});

}  // namespace fedrm
