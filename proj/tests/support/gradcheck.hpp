#pragma once
// Central finite-difference gradient checks shared by the unit tests and the
// acceptance suite.

#include <cmath>
#include <limits>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fedrm/model_zoo.hpp"
#include "fedrm/rng.hpp"

namespace fedrm::testing {

struct Probe {
    double* value = nullptr;
    double analytic = 0.0;
    std::string label;
    double step = 0.0;  // 0: the check's default step
};

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t skipped = 0;  // probes whose +h / -h evaluations took different relu / pool branches
    std::size_t below_resolution = 0;  // |gradient| under the rounding floor; judged on absolute error
    double max_rel_error = 0.0;
    std::string worst;

    bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
    std::string describe() const {
        std::ostringstream out;
        out << "checked=" << checked << " skipped=" << skipped << " max_rel_err=" << max_rel_error;
        if (!worst.empty()) out << " worst=" << worst;
        return out.str();
    }
};

/// |a - n| / max(|a|, |n|). Pairs where both magnitudes sit below `floor`
/// are compared on absolute error relative to `floor` instead, since the
/// difference quotient there is dominated by rounding.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// `eval` returns the loss and writes a signature of the branch pattern
/// (relu masks, pool switches) that produced it.
using Evaluator = std::function<double(std::uint64_t& signature)>;

/// Entries smaller than the rounding level of the difference quotient,
/// eps * |f| / h, divided by `resolution` are compared on absolute error
/// against that floor: the quotient cannot resolve them any finer.
inline GradCheckResult check_probes(std::vector<Probe>& probes, const Evaluator& eval, double step = 1e-4,
                                    double resolution = 1e-5) {
    GradCheckResult r;
    for (auto& p : probes) {
        const double saved = *p.value;
        const double h = p.step > 0.0 ? p.step : step;
        std::uint64_t sig_plus = 0, sig_minus = 0;
        *p.value = saved + h;
        const double f_plus = eval(sig_plus);
        *p.value = saved - h;
        const double f_minus = eval(sig_minus);
        *p.value = saved;
        if (sig_plus != sig_minus) {
            ++r.skipped;
            continue;
        }
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double rounding =
            std::numeric_limits<double>::epsilon() * std::max(std::abs(f_plus), std::abs(f_minus)) / h;
        const double floor = std::max(1e-7, rounding / resolution);
        if (std::max(std::abs(p.analytic), std::abs(numeric)) < floor) ++r.below_resolution;
        const double err = relative_error(p.analytic, numeric, floor);
        ++r.checked;
        if (r.worst.empty() || err > r.max_rel_error) {
            r.max_rel_error = err;
            std::ostringstream out;
            out << p.label << " (analytic " << p.analytic << ", numeric " << numeric << ")";
            r.worst = out.str();
        }
    }
    return r;
}

/// Probes for every entry of `values` (or `limit` random entries when
/// limit > 0 and the tensor is larger).
inline void add_probes(std::vector<Probe>& probes, Tensor& values, const Tensor& grad, const std::string& label,
                       std::size_t limit = 0, Rng* rng = nullptr) {
    const std::size_t n = values.size();
    std::vector<std::size_t> idx;
    if (limit == 0 || n <= limit || rng == nullptr) {
        for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
        for (std::size_t i = 0; i < limit; ++i) idx.push_back(static_cast<std::size_t>(rng->below(n)));
    }
    for (std::size_t i : idx) probes.push_back({values.ptr() + i, grad[i], label + "[" + std::to_string(i) + "]"});
}

inline void add_param_probes(std::vector<Probe>& probes, ParamSet& params, const ParamSet& grads,
                             const std::string& prefix, std::size_t limit = 0, Rng* rng = nullptr) {
    auto entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ParamEntry& g = grads.entries()[i];
        add_probes(probes, entries[i].value, g.value,
                   prefix + "L" + std::to_string(entries[i].layer) + "." + entries[i].name, limit, rng);
    }
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL)); }

/// Hash of every relu mask and pool switch in a trace.
inline std::uint64_t branch_signature(const ModelGraph& graph, const ForwardTrace& trace) {
    std::uint64_t h = 0x12345;
    for (std::size_t l = 0; l < graph.layers.size(); ++l) {
        if (graph.layers[l].kind == LayerKind::relu) {
            const Tensor& a = trace.activations[l + 1];
            std::uint64_t word = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                word = (word << 1) | (a[i] > 0.0 ? 1U : 0U);
                if (i % 64 == 63) h = mix(h, word), word = 0;
            }
            h = mix(h, word);
        }
        if (trace.switches[l]) {
            for (auto s : trace.switches[l]->argmax) h = mix(h, s);
        }
    }
    return h;
}

}  // namespace fedrm::testing
