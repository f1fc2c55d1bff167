#include "fedrm/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fedrm {

namespace {

void require_logits(const Tensor& logits, std::string_view what) {
    if (logits.rank() != 2 || logits.dim(0) == 0) {
        throw ShapeError(std::string(what) + " expects (batch, classes) logits, got " + shape_str(logits.shape()));
    }
}

struct LossTerms {
    LossBreakdown loss;
    ForwardTrace trace;
    ForwardTrace fixed;
    MatchingResult matching;
    Tensor logits_grad;
};

LossTerms evaluate_terms(const ModelArch& arch, const MatchingDecoder& decoder, const Batch& batch,
                         const ParamSet& w_local, const ParamSet& w_round, const DecoderParams& theta,
                         const LossConfig& config, bool with_grads) {
    if (batch.labels.empty() || batch.x.dim(0) != batch.labels.size()) {
        throw ShapeError("batch must be nonempty with one label per sample");
    }
    LossTerms t;
    t.trace = forward(arch.graph, w_local, batch.x);
    Tensor* grad = with_grads ? &t.logits_grad : nullptr;
    t.loss.cross_entropy = cross_entropy(t.trace.output(), batch.labels, grad);
    if (config.use_er) {
        Tensor er_grad;
        t.loss.er = er_loss(t.trace.output(), config.h_min, with_grads ? &er_grad : nullptr);
        if (with_grads) {
            auto dst = t.logits_grad.data();
            auto src = er_grad.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
    if (config.use_matching) {
        t.fixed = forward(arch.graph, w_round, batch.x);
        t.matching = matching_loss(t.trace, t.fixed, decoder, theta, config.matching_reduction);
        t.loss.matching = t.matching.value;
    }
    if (config.use_wd) t.loss.wd = wd_loss(w_round, w_local);
    t.loss.total = t.loss.cross_entropy + t.loss.er;
    if (config.use_matching) t.loss.total += config.matching_coeff * t.loss.matching;
    if (config.use_wd) t.loss.total += config.wd_coeff * t.loss.wd;
    return t;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    require_logits(logits, "softmax");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.ptr() + i * k;
        double* out = p.ptr() + i * k;
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) denom += (out[c] = std::exp(z[c] - zmax));
        for (std::size_t c = 0; c < k; ++c) out[c] /= denom;
    }
    return p;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
    require_logits(logits, "cross_entropy");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
    if (grad) *grad = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.ptr() + i * k;
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw ShapeError("cross_entropy: label out of range");
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[c] - zmax);
        const double log_norm = zmax + std::log(denom);
        total += log_norm - z[y];
        if (grad) {
            double* g = grad->ptr() + i * k;
            for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(z[c] - log_norm) / static_cast<double>(n);
            g[y] -= 1.0 / static_cast<double>(n);
        }
    }
    return total / static_cast<double>(n);
}

double er_loss(const Tensor& logits, double h_min, Tensor* grad) {
    require_logits(logits, "er_loss");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const Tensor p = softmax(logits);
    if (grad) *grad = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* pi = p.ptr() + i * k;
        double entropy = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (pi[c] > 0.0) entropy -= pi[c] * std::log(pi[c]);
        }
        if (entropy >= h_min) continue;
        total += h_min - entropy;
        if (grad) {
            // d(-H)/dz_c = p_c (log p_c + H)
            double* g = grad->ptr() + i * k;
            for (std::size_t c = 0; c < k; ++c) {
                g[c] = pi[c] > 0.0 ? pi[c] * (std::log(pi[c]) + entropy) / static_cast<double>(n) : 0.0;
            }
        }
    }
    return total / static_cast<double>(n);
}

double wd_loss(const ParamSet& w_round, const ParamSet& w_local, ParamSet* grad_local) {
    const double value = w_local.squared_distance(w_round);
    if (grad_local) {
        *grad_local = w_local;
        grad_local->axpy(-1.0, w_round).scale(2.0);
    }
    return value;
}

std::string_view to_string(MatchingReduction reduction) {
    return reduction == MatchingReduction::sum ? "sum" : "mean";
}

namespace {

// Divisor applied to one site's per-sample squared error.
double site_divisor(const Tensor& target, double batch, MatchingReduction reduction) {
    if (reduction == MatchingReduction::sum) return batch;
    return static_cast<double>(target.size());
}

}  // namespace

MatchingResult matching_loss(const ForwardTrace& trainable, const ForwardTrace& fixed,
                             const MatchingDecoder& decoder, const DecoderParams& theta,
                             MatchingReduction reduction) {
    if (theta.layers.size() != decoder.layers.size()) {
        throw ShapeError("matching parameters do not match the decoder");
    }
    if (trainable.activations.size() != fixed.activations.size()) {
        throw ShapeError("trainable and fixed traces come from different graphs");
    }
    MatchingResult result;
    result.decoder_traces.reserve(decoder.layers.size());
    const double n = static_cast<double>(trainable.input().dim(0));
    for (std::size_t j = 0; j < decoder.layers.size(); ++j) {
        const MatchingLayer& f = decoder.layers[j];
        const auto switches = decoder_switches(f, trainable);
        ForwardTrace ft = forward(f.graph, theta.layers[j], trainable.activations.at(f.source_activation), switches);
        const Tensor& target = fixed.activations.at(f.target_activation);
        if (ft.output().shape() != target.shape()) {
            throw ShapeError("matching layer " + std::to_string(j) + " output " + shape_str(ft.output().shape()) +
                             " does not match target " + shape_str(target.shape()));
        }
        double sq = 0.0;
        auto out = ft.output().data();
        auto tgt = target.data();
        for (std::size_t k = 0; k < out.size(); ++k) {
            const double d = out[k] - tgt[k];
            sq += d * d;
        }
        result.value += sq / site_divisor(target, n, reduction);
        result.decoder_traces.push_back(std::move(ft));
    }
    return result;
}

MatchingGrads matching_loss_backward(const MatchingResult& result, const ForwardTrace& trainable,
                                     const ForwardTrace& fixed, const MatchingDecoder& decoder,
                                     const DecoderParams& theta, double scale, MatchingReduction reduction) {
    MatchingGrads grads;
    grads.activation_grads.resize(trainable.activations.size());
    grads.theta.layers.reserve(decoder.layers.size());
    const double n = static_cast<double>(trainable.input().dim(0));
    for (std::size_t j = 0; j < decoder.layers.size(); ++j) {
        const MatchingLayer& f = decoder.layers[j];
        const ForwardTrace& ft = result.decoder_traces.at(j);
        const Tensor& target = fixed.activations.at(f.target_activation);
        Tensor out_grad(ft.output().shape());
        auto out = ft.output().data();
        auto tgt = target.data();
        const double div = site_divisor(target, n, reduction);
        for (std::size_t k = 0; k < out.size(); ++k) out_grad[k] = scale * 2.0 * (out[k] - tgt[k]) / div;
        // The input site is data, not a function of w_local; skip its gradient.
        const bool need_input = f.source_activation > 0;
        BackwardResult br = backward(f.graph, theta.layers[j], ft, out_grad, {.need_input_grad = need_input});
        grads.theta.layers.push_back(std::move(br.param_grads));
        if (need_input) {
            Tensor& slot = grads.activation_grads[f.source_activation];
            if (slot.empty()) {
                slot = std::move(br.input_grad);
            } else {
                for (std::size_t k = 0; k < slot.size(); ++k) slot[k] += br.input_grad[k];
            }
        }
    }
    return grads;
}

CompositeResult total_loss_and_grads(const ModelArch& arch, const MatchingDecoder& decoder, const Batch& batch,
                                     const ParamSet& w_local, const ParamSet& w_round,
                                     const DecoderParams& theta, const LossConfig& config) {
    LossTerms t = evaluate_terms(arch, decoder, batch, w_local, w_round, theta, config, true);
    CompositeResult result;
    result.loss = t.loss;
    std::vector<const Tensor*> injected;
    MatchingGrads mg;
    if (config.use_matching) {
        mg = matching_loss_backward(t.matching, t.trace, t.fixed, decoder, theta, config.matching_coeff,
                                    config.matching_reduction);
        injected.resize(t.trace.activations.size(), nullptr);
        for (std::size_t i = 0; i < injected.size(); ++i) {
            if (!mg.activation_grads[i].empty()) injected[i] = &mg.activation_grads[i];
        }
        result.theta_grad = std::move(mg.theta);
    }
    BackwardResult br = backward(arch.graph, w_local, t.trace, t.logits_grad,
                                 {.activation_grads = injected, .need_input_grad = false});
    result.w_grad = std::move(br.param_grads);
    if (config.use_wd) {
        ParamSet wd_grad;
        wd_loss(w_round, w_local, &wd_grad);
        result.w_grad.axpy(config.wd_coeff, wd_grad);
    }
    return result;
}

LossBreakdown total_loss(const ModelArch& arch, const MatchingDecoder& decoder, const Batch& batch,
                         const ParamSet& w_local, const ParamSet& w_round, const DecoderParams& theta,
                         const LossConfig& config) {
    return evaluate_terms(arch, decoder, batch, w_local, w_round, theta, config, false).loss;
}

}  // namespace fedrm
