#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fedrm {

/// Purposes for independent random substreams. Every consumer of randomness
/// derives its own stream from (seed, purpose, round, client) so that results
/// do not depend on call order or on how clients are scheduled.
enum class StreamTag : std::uint64_t {
    init_model = 1,
    init_decoder = 2,
    data_split = 3,
    synthetic = 4,
    tuner_sample = 5,
    client_select = 6,
    client_train = 7,
    test = 8,
};

/// Seeded generator with platform-independent distributions. The standard
/// library's distribution objects are implementation-defined, so uniform and
/// normal draws are derived from raw 64-bit words here instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Deterministic substream for the given purpose and coordinates.
    static Rng derive(std::uint64_t seed, StreamTag tag, std::uint64_t round = 0,
                      std::uint64_t client = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (one value per call).
    double normal();

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fedrm
