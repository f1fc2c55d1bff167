#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "fedrm/model_zoo.hpp"
#include "fedrm/nn.hpp"

namespace fedrm {

/// How each matching site's squared error is reduced over its units:
/// sum gives ||f_j - a_j||^2, mean divides that by the site's unit count.
enum class MatchingReduction { sum, mean };

std::string_view to_string(MatchingReduction reduction);

struct LossConfig {
    bool use_matching = false;
    bool use_wd = false;
    double wd_coeff = 0.1;
    bool use_er = true;
    double h_min = 0.5;  // nats
    double matching_coeff = 1.0;
    MatchingReduction matching_reduction = MatchingReduction::sum;
};

/// All terms are batch means. total = cross_entropy + matching_coeff * matching
/// + er + wd_coeff * wd, with disabled terms reported as 0.
struct LossBreakdown {
    double cross_entropy = 0.0;
    double matching = 0.0;
    double er = 0.0;
    double wd = 0.0;
    double total = 0.0;
};

struct Batch {
    Tensor x;
    std::vector<int> labels;
};

/// Row-wise softmax of (N, classes) logits.
Tensor softmax(const Tensor& logits);

/// Mean softmax cross-entropy. If `grad` is given it receives d(loss)/d(logits).
double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

/// Mean over the batch of max(0, h_min - H(softmax(logits))), entropy in nats.
double er_loss(const Tensor& logits, double h_min, Tensor* grad = nullptr);

/// ||w_round - w_local||^2 summed over every parameter. `grad_local` receives
/// the gradient with respect to w_local, 2 (w_local - w_round).
double wd_loss(const ParamSet& w_round, const ParamSet& w_local, ParamSet* grad_local = nullptr);

struct MatchingResult {
    double value = 0.0;
    /// One trace per matching layer f_j, run on the trainable model's activations.
    std::vector<ForwardTrace> decoder_traces;
};

/// Sum over matching layers of ||f_j(a_{j+1}(x; w_local)) - a_j(x; w_round)||^2,
/// averaged over the batch. The fixed-model activations are constants.
MatchingResult matching_loss(const ForwardTrace& trainable, const ForwardTrace& fixed,
                             const MatchingDecoder& decoder, const DecoderParams& theta,
                             MatchingReduction reduction = MatchingReduction::sum);

struct MatchingGrads {
    DecoderParams theta;
    /// Gradient of scale * matching loss with respect to each activation of the
    /// trainable model (indexed like ForwardTrace::activations; empty when the
    /// activation is not a source of any matching layer).
    std::vector<Tensor> activation_grads;
};

MatchingGrads matching_loss_backward(const MatchingResult& result, const ForwardTrace& trainable,
                                     const ForwardTrace& fixed, const MatchingDecoder& decoder,
                                     const DecoderParams& theta, double scale = 1.0,
                                     MatchingReduction reduction = MatchingReduction::sum);

struct CompositeResult {
    LossBreakdown loss;
    ParamSet w_grad;
    DecoderParams theta_grad;  // empty unless matching is enabled
};

/// The client objective and its gradient with respect to [w_local, theta].
/// `decoder` and `theta` are only read when config.use_matching is set.
CompositeResult total_loss_and_grads(const ModelArch& arch, const MatchingDecoder& decoder, const Batch& batch,
                                     const ParamSet& w_local, const ParamSet& w_round,
                                     const DecoderParams& theta, const LossConfig& config);

/// Loss only (no gradients); shares every code path with total_loss_and_grads
/// up to the backward pass.
LossBreakdown total_loss(const ModelArch& arch, const MatchingDecoder& decoder, const Batch& batch,
                         const ParamSet& w_local, const ParamSet& w_round, const DecoderParams& theta,
                         const LossConfig& config);

}  // namespace fedrm
