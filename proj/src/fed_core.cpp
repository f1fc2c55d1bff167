#include "fedrm/fed_core.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace fedrm {

std::string_view to_string(AggregationMode mode) {
    return mode == AggregationMode::literal ? "literal" : "renormalized";
}

HyperValues FixedSchedule::at(std::size_t round, std::size_t total_rounds) const {
    const std::size_t every = decay_every ? decay_every : std::max<std::size_t>(1, total_rounds / 3);
    const std::size_t steps = round > 0 ? (round - 1) / every : 0;
    return HyperValues{initial_lr * std::pow(decay_factor, static_cast<double>(steps)), iterations};
}

std::vector<GridAxis> TunerConfig::default_axes() {
    return {GridAxis(kLearningRateAxis, {0.005, 0.01, 0.02, 0.05, 0.1, 0.2}),
            GridAxis(kIterationsAxis, {10, 20, 30, 50, 80, 120})};
}

std::vector<GridAxis> TunerConfig::kws_axes() {
    return {GridAxis(kLearningRateAxis, {0.005, 0.01, 0.02, 0.05, 0.1, 0.2}),
            GridAxis(kIterationsAxis, {5, 10, 20, 30})};
}

FederatedData prepare_federated_data(const Dataset& train_pool, Dataset test, std::size_t clients,
                                     PartitionMode mode, std::size_t validation_size, std::uint64_t seed,
                                     std::size_t num_classes) {
    Rng rng = Rng::derive(seed, StreamTag::data_split);
    auto [held, rest] = stratified_holdout(train_pool, validation_size, rng, num_classes);
    FederatedData out;
    out.num_classes = num_classes;
    out.validation = train_pool.subset(held, Split::validation);
    const Dataset remaining = train_pool.subset(rest, Split::train);
    const Partition parts = partition(remaining, clients, mode, rng, num_classes);
    out.shards.reserve(clients);
    for (const auto& idx : parts.clients) out.shards.push_back(remaining.subset(idx, Split::train));
    out.test = std::move(test);
    return out;
}

std::vector<std::size_t> select_clients(std::size_t clients, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("client fraction C must lie in (0, 1]");
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(clients)));
    if (count == 0) throw Error("C * K rounds to zero clients");
    std::vector<std::size_t> ids(clients);
    std::iota(ids.begin(), ids.end(), 0);
    // Partial Fisher-Yates: the first `count` slots become a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(clients - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ClientUpdate train_client(const ModelArch& arch, const MatchingDecoder& decoder, ClientState& client,
                          const ParamSet& w_round, const HyperValues& h, const FedConfig& config, Rng& rng) {
    if (h.sgd_iterations == 0) throw Error("client training needs at least one SGD iteration");
    if (h.learning_rate < 0.0 || !std::isfinite(h.learning_rate)) throw Error("learning rate must be finite and >= 0");
    if (client.shard.size() == 0) throw Error("client " + std::to_string(client.id) + " has an empty shard");
    const std::size_t n = client.size();
    const bool whole = n <= config.batch_size;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (!whole) rng.shuffle(std::span<std::size_t>(order));
    std::size_t cursor = 0;

    ClientUpdate update{w_round, ClientReport{client.id, {}, whole}};
    for (std::size_t it = 0; it < h.sgd_iterations; ++it) {
        std::span<const std::size_t> idx(order);
        if (!whole) {
            if (cursor + config.batch_size > n) {
                rng.shuffle(std::span<std::size_t>(order));
                cursor = 0;
            }
            idx = idx.subspan(cursor, config.batch_size);
            cursor += config.batch_size;
        }
        const Batch batch = client.shard.batch(idx);
        CompositeResult res = total_loss_and_grads(arch, decoder, batch, update.w_local, w_round, client.theta,
                                                   config.loss);
        update.report.final_loss = res.loss;
        if (h.learning_rate == 0.0) continue;
        apply_sgd(update.w_local, res.w_grad, h.learning_rate);
        if (config.loss.use_matching) client.theta.axpy(-h.learning_rate, res.theta_grad);
    }
    return update;
}

ParamSet aggregate(const ParamSet& w_round, std::span<const WeightedUpdate> updates, std::size_t total_points,
                   AggregationMode mode) {
    std::size_t selected = 0;
    for (const auto& u : updates) {
        if (!u.w_local) throw Error("aggregate: missing client parameters");
        u.w_local->require_same_layout(w_round, "aggregate");
        selected += u.points;
    }
    if (selected > total_points) throw Error("aggregate: selected clients hold more points than N");
    const double denom = static_cast<double>(mode == AggregationMode::literal ? total_points : selected);
    if (!(denom > 0.0)) throw Error("aggregate: no data points");
    ParamSet delta = w_round.zeros_like();
    auto out_entries = delta.entries();
    const auto base = w_round.entries();
    for (const auto& u : updates) {
        const double weight = static_cast<double>(u.points) / denom;
        const auto local = u.w_local->entries();
        for (std::size_t e = 0; e < out_entries.size(); ++e) {
            auto acc = out_entries[e].value.data();
            auto wi = local[e].value.data();
            auto w0 = base[e].value.data();
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weight * (wi[k] - w0[k]);
        }
    }
    ParamSet next = w_round;
    auto next_entries = next.entries();
    for (std::size_t e = 0; e < next_entries.size(); ++e) {
        auto dst = next_entries[e].value.data();
        auto acc = out_entries[e].value.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += acc[k];
    }
    return next;
}

namespace {

constexpr std::size_t kEvalChunk = 250;

template <typename Fn>
void for_each_chunk(const Dataset& data, Fn&& fn) {
    std::vector<std::size_t> idx;
    for (std::size_t first = 0; first < data.size(); first += kEvalChunk) {
        const std::size_t count = std::min(kEvalChunk, data.size() - first);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), first);
        fn(data.batch(idx));
    }
}

HyperValues hyper_from_sample(const HyperGrid& grid, const HyperSample& s, const HyperValues& fallback) {
    HyperValues h = fallback;
    if (const std::size_t d = grid.find_axis(kLearningRateAxis); d < grid.dims()) h.learning_rate = s.raw[d];
    if (const std::size_t d = grid.find_axis(kIterationsAxis); d < grid.dims()) {
        h.sgd_iterations = static_cast<std::size_t>(std::llround(s.raw[d]));
    }
    return h;
}

std::size_t total_points(const std::vector<Dataset>& shards) {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
}

}  // namespace

double evaluate_loss(const ModelArch& arch, const ParamSet& w, const Dataset& data) {
    if (data.size() == 0) throw Error("evaluate_loss: empty dataset");
    double total = 0.0;
    for_each_chunk(data, [&](const Batch& b) {
        const ForwardTrace trace = forward(arch.graph, w, b.x);
        total += cross_entropy(trace.output(), b.labels) * static_cast<double>(b.labels.size());
    });
    return total / static_cast<double>(data.size());
}

double evaluate_accuracy(const ModelArch& arch, const ParamSet& w, const Dataset& data) {
    if (data.size() == 0) throw Error("evaluate_accuracy: empty dataset");
    std::size_t correct = 0;
    for_each_chunk(data, [&](const Batch& b) {
        const ForwardTrace trace = forward(arch.graph, w, b.x);
        const Tensor& logits = trace.output();
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < b.labels.size(); ++i) {
            const double* row = logits.ptr() + i * k;
            const auto best = static_cast<int>(std::max_element(row, row + k) - row);
            if (best == b.labels[i]) ++correct;
        }
    });
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

Federation::Federation(FedConfig config, FederatedData data)
    : config_(std::move(config)),
      arch_(build_arch(config_.arch, config_.match_input)),
      server_{ParamSet{},
              HyperGrid(config_.tuner.axes),
              HyperDist::centered(config_.tuner.axes.size(), config_.tuner.init_std),
              RewardWindow(config_.tuner.window_radius),
              std::move(data.validation),
              1,
              total_points(data.shards),
              0.0},
      test_(std::move(data.test)) {
    if (data.shards.size() != config_.clients) {
        throw Error("expected " + std::to_string(config_.clients) + " client shards, got " +
                    std::to_string(data.shards.size()));
    }
    if (config_.batch_size == 0) throw Error("batch size must be positive");
    if (config_.loss.use_matching) decoder_ = build_matching_decoder(arch_);
    Rng init = Rng::derive(config_.seed, StreamTag::init_model);
    server_.w = init_params(arch_.graph, init);
    clients_.reserve(config_.clients);
    for (std::size_t k = 0; k < config_.clients; ++k) {
        ClientState c{k, std::move(data.shards[k]), {}};
        if (c.shard.size() == 0) throw Error("client " + std::to_string(k) + " has no data");
        if (config_.loss.use_matching) {
            Rng theta_rng = Rng::derive(config_.seed, StreamTag::init_decoder, 0, k);
            c.theta = init_decoder_params(decoder_, theta_rng);
        }
        clients_.push_back(std::move(c));
    }
    server_.loss = evaluate_loss(arch_, server_.w, server_.validation);
}

HyperValues Federation::scheduled(std::size_t round) const { return config_.schedule.at(round, config_.rounds); }

RoundRecord Federation::run_round() {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t t = server_.round;
    RoundRecord rec;
    rec.round = t;
    rec.hyper = scheduled(t);

    std::vector<double> sample_score;
    if (config_.use_ah) {
        Rng rng = Rng::derive(config_.seed, StreamTag::tuner_sample, t);
        const HyperSample s = sample(server_.grid, server_.dist, rng);
        sample_score = score(server_.grid, server_.dist, s.point);
        rec.hyper = hyper_from_sample(server_.grid, s, rec.hyper);
        rec.h = s.coords;
        rec.mu = server_.dist.mu;
        rec.log_precision = server_.dist.log_precision;
        std::vector<double> raw(server_.grid.dims());
        for (std::size_t d = 0; d < raw.size(); ++d) raw[d] = server_.grid.axis(d).raw_at(server_.dist.mu[d]);
        rec.mu_raw = std::move(raw);
    }

    Rng select_rng = Rng::derive(config_.seed, StreamTag::client_select, t);
    rec.clients = select_clients(config_.clients, config_.fraction, select_rng);

    std::vector<std::optional<ClientUpdate>> updates(rec.clients.size());
    std::vector<std::exception_ptr> errors(rec.clients.size());
    const auto work = [&](std::size_t slot) {
        try {
            ClientState& client = clients_[rec.clients[slot]];
            Rng rng = Rng::derive(config_.seed, StreamTag::client_train, t, client.id);
            updates[slot] = train_client(arch_, decoder_, client, server_.w, rec.hyper, config_, rng);
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(config_.threads, 1), rec.clients.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < rec.clients.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < rec.clients.size(); i = next++) work(i);
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::vector<WeightedUpdate> weighted;
    weighted.reserve(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
        weighted.push_back({&updates[i]->w_local, clients_[rec.clients[i]].size()});
        rec.client_losses.push_back(updates[i]->report);
    }
    ParamSet next = aggregate(server_.w, weighted, server_.total_points, config_.aggregation);

    rec.loss_before = server_.loss;
    rec.loss_after = evaluate_loss(arch_, next, server_.validation);
    rec.reward = reward(rec.loss_before, rec.loss_after);

    if (config_.use_ah) {
        server_.window.push(rec.reward, std::move(sample_score));
        server_.dist = reinforce_update(server_.dist, server_.window,
                                        {config_.tuner.eta_h, config_.tuner.update_sign, config_.tuner.freeze_precision});
    }
    server_.w = std::move(next);
    server_.loss = rec.loss_after;
    ++server_.round;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return rec;
}

double Federation::test_accuracy() const { return evaluate_accuracy(arch_, server_.w, test_); }

ExperimentResult run_experiment(const FedConfig& config, FederatedData data, const ExperimentCallbacks& callbacks) {
    if (config.eval_every == 0) throw Error("evaluation cadence E must be positive");
    Federation fed(config, std::move(data));
    ExperimentResult result;
    result.records.reserve(config.rounds);
    const bool has_test = fed.test_set().size() > 0;
    if (has_test && callbacks.on_eval) callbacks.on_eval(0, fed.test_accuracy());
    for (std::size_t t = 1; t <= config.rounds; ++t) {
        result.records.push_back(fed.run_round());
        if (callbacks.on_round) callbacks.on_round(result.records.back());
        if (has_test && callbacks.on_eval && t % config.eval_every == 0) callbacks.on_eval(t, fed.test_accuracy());
    }
    result.final_w = fed.server().w;
    if (has_test) result.final_accuracy = fed.test_accuracy();
    return result;
}

}  // namespace fedrm
