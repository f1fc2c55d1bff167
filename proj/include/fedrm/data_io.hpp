#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fedrm/losses.hpp"
#include "fedrm/rng.hpp"
#include "fedrm/tensor.hpp"

namespace fedrm {

/// A file did not match the format it claims to be in.
class FormatError : public Error {
public:
    using Error::Error;
};

enum class Split { train, validation, test };

std::string_view to_string(Split split);

struct Dataset {
    Tensor samples;           // (count, sample shape...)
    std::vector<int> labels;  // in [0, num_classes)
    Split split = Split::train;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const { return samples.sample_shape(); }

    /// Throws FormatError if counts disagree or a label is out of range.
    void validate(std::size_t num_classes = 10) const;

    Dataset subset(std::span<const std::size_t> indices, Split split_tag) const;
    Batch batch(std::span<const std::size_t> indices) const;
};

struct IdxArray {
    std::uint8_t type_code = 0;
    Shape dims;
    std::vector<std::uint8_t> bytes;
};

/// Parses an unsigned-byte IDX file (big-endian header: 0x00 0x00 type ndim,
/// then ndim u32 dimensions).
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(std::span<const std::uint8_t> data);

/// Pixels scaled to [0, 1] and flattened to 784-vectors.
std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir);
Dataset load_mnist_split(const std::filesystem::path& images, const std::filesystem::path& labels, Split split);

/// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record),
/// pixels scaled to [0, 1], shape (3, 32, 32).
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);
Dataset load_cifar10_file(const std::filesystem::path& file, Split split);
Dataset parse_cifar10(std::span<const std::uint8_t> data, Split split);

/// "FEDF" feature container: little-endian magic, version (1), count, three
/// dims, count * prod(dims) float32 values, then count label bytes.
Dataset load_features(const std::filesystem::path& file, Split split = Split::train);
Dataset parse_features(std::span<const std::uint8_t> data, Split split = Split::train);
void write_features(const std::filesystem::path& file, const Dataset& data);
std::vector<std::uint8_t> encode_features(const Dataset& data);

inline constexpr std::uint32_t kFeatureVersion = 1;

struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t samples_per_class = 100;
    Shape sample_shape = {784};
    double separation = 3.0;  // distance of each class mean from the origin
    double spread = 1.0;      // expected norm of the noise vector
};

/// Gaussian class blobs. Class means are random directions scaled to
/// `separation`; samples add isotropic noise
/// with per-coordinate std spread / sqrt(dim).
Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng, Split split = Split::train);

enum class PartitionMode { iid, non_iid };

std::string_view to_string(PartitionMode mode);

struct Partition {
    std::vector<std::vector<std::size_t>> clients;
};

/// iid: shuffled, dealt round-robin so shard sizes differ by at most one.
/// non_iid: client k receives exactly the samples of class k (requires
/// K == num_classes).
Partition partition(const Dataset& data, std::size_t clients, PartitionMode mode, Rng& rng,
                    std::size_t num_classes = 10);

/// Class-stratified split of `count` samples (count / classes per class,
/// remainder to the lowest classes). Returns (held-out indices, remaining indices).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(const Dataset& data,
                                                                                 std::size_t count, Rng& rng,
                                                                                 std::size_t num_classes = 10);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace fedrm
