#include "fedrm/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace fedrm {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> d, std::size_t off) {
    return (std::uint32_t{d[off]} << 24) | (std::uint32_t{d[off + 1]} << 16) | (std::uint32_t{d[off + 2]} << 8) |
           std::uint32_t{d[off + 3]};
}

std::uint32_t read_le32(std::span<const std::uint8_t> d, std::size_t off) {
    return std::uint32_t{d[off]} | (std::uint32_t{d[off + 1]} << 8) | (std::uint32_t{d[off + 2]} << 16) |
           (std::uint32_t{d[off + 3]} << 24);
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

}  // namespace

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "unknown";
}

std::string_view to_string(PartitionMode mode) { return mode == PartitionMode::iid ? "iid" : "non_iid"; }

void Dataset::validate(std::size_t num_classes) const {
    if (samples.rank() == 0 || samples.dim(0) != labels.size()) {
        throw FormatError("dataset has " + std::to_string(labels.size()) + " labels for samples of shape " +
                          shape_str(samples.shape()));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw FormatError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, Split split_tag) const {
    Dataset out;
    out.samples = gather_rows(samples, indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    out.split = split_tag;
    return out;
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
    Batch b;
    b.x = gather_rows(samples, indices);
    b.labels.reserve(indices.size());
    for (std::size_t i : indices) b.labels.push_back(labels.at(i));
    return b;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> data(size);
    if (size && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
        throw FormatError("failed reading " + path.string());
    }
    return data;
}

// ---------------------------------------------------------------- IDX

IdxArray parse_idx(std::span<const std::uint8_t> data) {
    if (data.size() < 4 || data[0] != 0 || data[1] != 0) throw FormatError("IDX: bad magic");
    IdxArray arr;
    arr.type_code = data[2];
    if (arr.type_code != 0x08) throw FormatError("IDX: only unsigned-byte payloads are supported");
    const std::size_t ndim = data[3];
    if (ndim == 0) throw FormatError("IDX: zero dimensions");
    const std::size_t header = 4 + 4 * ndim;
    if (data.size() < header) throw FormatError("IDX: truncated header");
    for (std::size_t d = 0; d < ndim; ++d) arr.dims.push_back(read_be32(data, 4 + 4 * d));
    const std::size_t payload = shape_size(arr.dims);
    if (data.size() - header < payload) throw FormatError("IDX: truncated payload");
    if (data.size() - header > payload) throw FormatError("IDX: trailing bytes after payload");
    arr.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(header), data.end());
    return arr;
}

IdxArray read_idx(const std::filesystem::path& path) {
    try {
        return parse_idx(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Dataset load_mnist_split(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
    const IdxArray img = read_idx(images);
    const IdxArray lab = read_idx(labels);
    if (img.dims.size() != 3) throw FormatError(images.string() + ": expected magic 0x00000803 (3-d images)");
    if (lab.dims.size() != 1) throw FormatError(labels.string() + ": expected magic 0x00000801 (label vector)");
    if (img.dims[0] != lab.dims[0]) {
        throw FormatError("MNIST image count " + std::to_string(img.dims[0]) + " != label count " +
                          std::to_string(lab.dims[0]));
    }
    const std::size_t n = img.dims[0];
    const std::size_t pixels = img.dims[1] * img.dims[2];
    Dataset ds;
    ds.split = split;
    ds.samples = Tensor({n, pixels});
    for (std::size_t i = 0; i < img.bytes.size(); ++i) ds.samples[i] = img.bytes[i] / 255.0;
    ds.labels.assign(lab.bytes.begin(), lab.bytes.end());
    ds.validate();
    return ds;
}

std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir) {
    return {load_mnist_split(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", Split::train),
            load_mnist_split(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", Split::test)};
}

// ---------------------------------------------------------------- CIFAR-10

Dataset parse_cifar10(std::span<const std::uint8_t> data, Split split) {
    if (data.empty() || data.size() % kCifarRecord != 0) {
        throw FormatError("CIFAR-10: length " + std::to_string(data.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecord));
    }
    const std::size_t n = data.size() / kCifarRecord;
    Dataset ds;
    ds.split = split;
    ds.samples = Tensor({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = data.data() + i * kCifarRecord;
        ds.labels[i] = rec[0];
        double* dst = ds.samples.ptr() + i * (kCifarRecord - 1);
        for (std::size_t k = 1; k < kCifarRecord; ++k) dst[k - 1] = rec[k] / 255.0;
    }
    ds.validate();
    return ds;
}

Dataset load_cifar10_file(const std::filesystem::path& file, Split split) {
    try {
        return parse_cifar10(read_file(file), split);
    } catch (const FormatError& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
    std::vector<std::uint8_t> train_bytes;
    for (int b = 1; b <= 5; ++b) {
        const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
        const auto bytes = read_file(path);
        if (bytes.size() % kCifarRecord != 0) throw FormatError(path.string() + ": truncated record");
        train_bytes.insert(train_bytes.end(), bytes.begin(), bytes.end());
    }
    return {parse_cifar10(train_bytes, Split::train), load_cifar10_file(dir / "test_batch.bin", Split::test)};
}

// ---------------------------------------------------------------- feature container

Dataset parse_features(std::span<const std::uint8_t> data, Split split) {
    constexpr std::size_t header = 4 + 4 + 4 + 12;
    if (data.size() < header) throw FormatError("FEDF: truncated header");
    if (std::memcmp(data.data(), "FEDF", 4) != 0) throw FormatError("FEDF: bad magic");
    const std::uint32_t version = read_le32(data, 4);
    if (version != kFeatureVersion) throw FormatError("FEDF: unsupported version " + std::to_string(version));
    const std::size_t count = read_le32(data, 8);
    const Shape dims{read_le32(data, 12), read_le32(data, 16), read_le32(data, 20)};
    const std::size_t per = shape_size(dims);
    const std::size_t expected = header + count * per * 4 + count;
    if (data.size() < expected) throw FormatError("FEDF: truncated payload");
    if (data.size() > expected) throw FormatError("FEDF: trailing bytes after payload");
    Dataset ds;
    ds.split = split;
    ds.samples = Tensor({count, dims[0], dims[1], dims[2]});
    for (std::size_t i = 0; i < count * per; ++i) {
        ds.samples[i] = static_cast<double>(std::bit_cast<float>(read_le32(data, header + 4 * i)));
    }
    const std::size_t labels_at = header + count * per * 4;
    ds.labels.assign(data.begin() + static_cast<std::ptrdiff_t>(labels_at), data.end());
    ds.validate();
    return ds;
}

Dataset load_features(const std::filesystem::path& file, Split split) {
    try {
        return parse_features(read_file(file), split);
    } catch (const FormatError& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_features(const Dataset& data) {
    const Shape shape = data.sample_shape();
    if (shape.size() != 3) throw FormatError("FEDF stores samples of shape (C, H, W)");
    std::vector<std::uint8_t> out{'F', 'E', 'D', 'F'};
    put_le32(out, kFeatureVersion);
    put_le32(out, static_cast<std::uint32_t>(data.size()));
    for (std::size_t d : shape) put_le32(out, static_cast<std::uint32_t>(d));
    for (double v : data.samples.data()) put_le32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    for (int y : data.labels) out.push_back(static_cast<std::uint8_t>(y));
    return out;
}

void write_features(const std::filesystem::path& file, const Dataset& data) {
    const auto bytes = encode_features(data);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------- synthetic data

Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng, Split split) {
    if (spec.classes == 0 || spec.samples_per_class == 0 || shape_size(spec.sample_shape) == 0) {
        throw Error("synthetic dataset needs positive class, sample and feature counts");
    }
    const std::size_t dim = shape_size(spec.sample_shape);
    std::vector<std::vector<double>> means(spec.classes, std::vector<double>(dim));
    for (auto& m : means) {
        double norm = 0.0;
        for (double& v : m) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : m) v *= spec.separation / norm;
    }
    const double noise = spec.spread / std::sqrt(static_cast<double>(dim));
    const std::size_t n = spec.classes * spec.samples_per_class;
    Shape shape{n};
    shape.insert(shape.end(), spec.sample_shape.begin(), spec.sample_shape.end());
    Dataset ds;
    ds.split = split;
    ds.samples = Tensor(shape);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % spec.classes;
        ds.labels[i] = static_cast<int>(c);
        double* dst = ds.samples.ptr() + i * dim;
        for (std::size_t k = 0; k < dim; ++k) dst[k] = means[c][k] + noise * rng.normal();
    }
    return ds;
}

// ---------------------------------------------------------------- partitioning

Partition partition(const Dataset& data, std::size_t clients, PartitionMode mode, Rng& rng, std::size_t num_classes) {
    if (clients == 0) throw Error("partition needs at least one client");
    if (clients > data.size()) {
        throw Error("cannot split " + std::to_string(data.size()) + " samples across " + std::to_string(clients) +
                    " clients");
    }
    Partition p;
    p.clients.resize(clients);
    if (mode == PartitionMode::iid) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t i = 0; i < order.size(); ++i) p.clients[i % clients].push_back(order[i]);
        return p;
    }
    if (clients != num_classes) {
        throw Error("non_iid partition needs one client per class (K = " + std::to_string(num_classes) + "), got K = " +
                    std::to_string(clients));
    }
    for (std::size_t i = 0; i < data.size(); ++i) p.clients.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
    for (std::size_t k = 0; k < clients; ++k) {
        if (p.clients[k].empty()) throw Error("non_iid partition: class " + std::to_string(k) + " has no samples");
    }
    return p;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(const Dataset& data,
                                                                                 std::size_t count, Rng& rng,
                                                                                 std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
    std::vector<char> held(data.size(), 0);
    std::vector<std::size_t> holdout;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t want = count / num_classes + (c < count % num_classes ? 1 : 0);
        auto& pool = by_class[c];
        if (want > pool.size()) {
            throw Error("class " + std::to_string(c) + " has too few samples for a validation split of " +
                        std::to_string(count));
        }
        rng.shuffle(std::span<std::size_t>(pool));
        for (std::size_t k = 0; k < want; ++k) {
            holdout.push_back(pool[k]);
            held[pool[k]] = 1;
        }
    }
    std::sort(holdout.begin(), holdout.end());
    std::vector<std::size_t> rest;
    rest.reserve(data.size() - holdout.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!held[i]) rest.push_back(i);
    }
    return {std::move(holdout), std::move(rest)};
}

}  // namespace fedrm
