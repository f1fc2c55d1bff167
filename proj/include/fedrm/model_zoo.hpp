#pragma once

#include <string_view>
#include <vector>

#include "fedrm/nn.hpp"

namespace fedrm {

enum class ArchId { mnist_mlp, cifar_cnn, kws_cnn };

std::string_view to_string(ArchId id);
/// Throws Error on an unknown identifier.
ArchId parse_arch_id(std::string_view name);

/// Activations that take part in representation matching, as indices into
/// ForwardTrace::activations (0 is the input). Strictly increasing; the last
/// one is the top-layer output (raw logits).
struct MatchSites {
    std::vector<std::size_t> activations;
};

struct ModelArch {
    ArchId id = ArchId::mnist_mlp;
    ModelGraph graph;
    std::size_t num_classes = 10;
    MatchSites sites;

    std::size_t parameter_count() const { return graph.parameter_count(); }
};

/// The three reference networks. Convolutions use "same" zero padding
/// (kernel / 2) so that every 2x2 pool halves an even spatial size:
///
///   mnist_mlp  784 -> dense 100 -> relu -> dense 100 -> relu -> dense 10
///   cifar_cnn  3x32x32 -> conv5x5 32 -> relu -> pool -> conv5x5 64 -> relu -> pool
///              -> flatten(4096) -> dense 1024 -> relu -> dense 10
///   kws_cnn    1x32x32 -> [conv3x3 64 -> relu] x2 -> pool -> [conv3x3 64 -> relu] x2 -> pool
///              -> flatten(4096) -> dense 1024 -> relu -> dense 10
///
/// Parameter counts: 89,610 / 4,259,274 / 4,317,002.
///
/// `match_input` controls whether the input is the first match site.
ModelArch build_arch(ArchId id, bool match_input = true);

/// f_j: maps the trainable model's activation at sites[j + 1] onto the
/// fixed model's activation at sites[j]. The graph reverses the forward path
/// between the two sites: dense -> dense with swapped units, conv -> transposed
/// conv with the same kernel, flatten -> unflatten, maxpool -> unpool driven
/// by the trainable model's switches.
struct MatchingLayer {
    ModelGraph graph;
    std::size_t source_activation = 0;
    std::size_t target_activation = 0;
    /// Layer indices (in the model graph) of the max-pools whose switches
    /// feed this layer's unpools, in unpool order.
    std::vector<std::size_t> switch_layers;
};

struct MatchingDecoder {
    std::vector<MatchingLayer> layers;  // f_1 .. f_{M-1}
};

/// Per-client matching parameters theta, one ParamSet per matching layer.
struct DecoderParams {
    std::vector<ParamSet> layers;

    DecoderParams zeros_like() const;
    DecoderParams& axpy(double alpha, const DecoderParams& other);
    std::size_t element_count() const;
    friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

/// Throws ShapeError if a matching layer's output cannot reproduce its
/// target activation shape.
MatchingDecoder build_matching_decoder(const ModelArch& arch);
DecoderParams init_decoder_params(const MatchingDecoder& decoder, Rng& rng);

/// Switches taken from `trace` for matching layer `layer`, ready to pass to forward().
std::vector<const PoolSwitches*> decoder_switches(const MatchingLayer& layer, const ForwardTrace& trace);

}  // namespace fedrm
