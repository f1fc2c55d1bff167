#include "fedrm/model_zoo.hpp"

#include <algorithm>

namespace fedrm {

std::string_view to_string(ArchId id) {
    switch (id) {
        case ArchId::mnist_mlp: return "mnist_mlp";
        case ArchId::cifar_cnn: return "cifar_cnn";
        case ArchId::kws_cnn: return "kws_cnn";
    }
    return "unknown";
}

ArchId parse_arch_id(std::string_view name) {
    if (name == "mnist_mlp") return ArchId::mnist_mlp;
    if (name == "cifar_cnn") return ArchId::cifar_cnn;
    if (name == "kws_cnn") return ArchId::kws_cnn;
    throw Error("unknown architecture '" + std::string(name) + "'");
}

ModelArch build_arch(ArchId id, bool match_input) {
    ModelArch arch;
    arch.id = id;
    auto& layers = arch.graph.layers;
    switch (id) {
        case ArchId::mnist_mlp:
            arch.graph.input_shape = {784};
            layers = {LayerSpec::dense(784, 100), LayerSpec::relu(), LayerSpec::dense(100, 100), LayerSpec::relu(),
                      LayerSpec::dense(100, 10)};
            break;
        case ArchId::cifar_cnn:
            arch.graph.input_shape = {3, 32, 32};
            layers = {LayerSpec::conv2d(3, 32, 5, 1, 2),  LayerSpec::relu(), LayerSpec::maxpool2x2(),
                      LayerSpec::conv2d(32, 64, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool2x2(),
                      LayerSpec::flatten(),               LayerSpec::dense(64 * 8 * 8, 1024),
                      LayerSpec::relu(),                  LayerSpec::dense(1024, 10)};
            break;
        case ArchId::kws_cnn:
            arch.graph.input_shape = {1, 32, 32};
            layers = {LayerSpec::conv2d(1, 64, 3, 1, 1),  LayerSpec::relu(), LayerSpec::conv2d(64, 64, 3, 1, 1),
                      LayerSpec::relu(),                  LayerSpec::maxpool2x2(),
                      LayerSpec::conv2d(64, 64, 3, 1, 1), LayerSpec::relu(), LayerSpec::conv2d(64, 64, 3, 1, 1),
                      LayerSpec::relu(),                  LayerSpec::maxpool2x2(),
                      LayerSpec::flatten(),               LayerSpec::dense(64 * 8 * 8, 1024),
                      LayerSpec::relu(),                  LayerSpec::dense(1024, 10)};
            break;
    }
    if (match_input) arch.sites.activations.push_back(0);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::relu) arch.sites.activations.push_back(i + 1);
    }
    arch.sites.activations.push_back(layers.size());
    return arch;
}

MatchingDecoder build_matching_decoder(const ModelArch& arch) {
    const auto& sites = arch.sites.activations;
    if (sites.size() < 2) throw ShapeError("representation matching needs at least two match sites");
    const auto shapes = arch.graph.activation_shapes();
    MatchingDecoder decoder;
    for (std::size_t j = 0; j + 1 < sites.size(); ++j) {
        const std::size_t lo = sites[j];
        const std::size_t hi = sites[j + 1];
        if (hi <= lo) throw ShapeError("match sites must be strictly increasing");
        MatchingLayer f;
        f.source_activation = hi;
        f.target_activation = lo;
        f.graph.input_shape = shapes[hi];
        // Walk the forward path from the upper site back down to the lower one.
        for (std::size_t layer = hi; layer-- > lo;) {
            const LayerSpec& spec = arch.graph.layers[layer];
            switch (spec.kind) {
                case LayerKind::relu: break;
                case LayerKind::dense: f.graph.layers.push_back(LayerSpec::dense(spec.out_units, spec.in_units)); break;
                case LayerKind::conv2d:
                    f.graph.layers.push_back(LayerSpec::transposed_conv2d(spec.out_channels, spec.in_channels,
                                                                          spec.kernel_h, spec.stride, spec.padding));
                    break;
                case LayerKind::maxpool2x2:
                    f.graph.layers.push_back(LayerSpec::unpool2x2());
                    f.switch_layers.push_back(layer);
                    break;
                case LayerKind::flatten: f.graph.layers.push_back(LayerSpec::unflatten(shapes[layer])); break;
                default:
                    throw ShapeError("cannot build a matching layer across a " + std::string(to_string(spec.kind)) +
                                     " layer");
            }
        }
        const Shape produced = f.graph.output_shape();
        if (produced != shapes[lo]) {
            throw ShapeError("matching layer " + std::to_string(j) + " produces " + shape_str(produced) +
                             " but its target activation is " + shape_str(shapes[lo]));
        }
        decoder.layers.push_back(std::move(f));
    }
    return decoder;
}

DecoderParams init_decoder_params(const MatchingDecoder& decoder, Rng& rng) {
    DecoderParams theta;
    theta.layers.reserve(decoder.layers.size());
    for (const auto& layer : decoder.layers) theta.layers.push_back(init_params(layer.graph, rng));
    return theta;
}

DecoderParams DecoderParams::zeros_like() const {
    DecoderParams out;
    out.layers.reserve(layers.size());
    for (const auto& p : layers) out.layers.push_back(p.zeros_like());
    return out;
}

DecoderParams& DecoderParams::axpy(double alpha, const DecoderParams& other) {
    if (other.layers.size() != layers.size()) throw ShapeError("decoder parameter sets differ in layer count");
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].axpy(alpha, other.layers[i]);
    return *this;
}

std::size_t DecoderParams::element_count() const {
    std::size_t n = 0;
    for (const auto& p : layers) n += p.element_count();
    return n;
}

std::vector<const PoolSwitches*> decoder_switches(const MatchingLayer& layer, const ForwardTrace& trace) {
    std::vector<const PoolSwitches*> out;
    out.reserve(layer.switch_layers.size());
    for (std::size_t idx : layer.switch_layers) {
        if (idx >= trace.switches.size() || !trace.switches[idx]) {
            throw ShapeError("trace has no pool switches at layer " + std::to_string(idx));
        }
        out.push_back(&*trace.switches[idx]);
    }
    return out;
}

}  // namespace fedrm
