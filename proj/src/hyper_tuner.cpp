#include "fedrm/hyper_tuner.hpp"

#include <algorithm>
#include <cmath>

namespace fedrm {

GridAxis::GridAxis(std::string axis_name, std::vector<double> raw) : name(std::move(axis_name)), values(std::move(raw)) {
    if (values.empty()) throw Error("hyper-parameter axis '" + name + "' has no values");
    if (!std::is_sorted(values.begin(), values.end()) ||
        std::adjacent_find(values.begin(), values.end()) != values.end()) {
        throw Error("hyper-parameter axis '" + name + "' must be strictly increasing");
    }
    coords.resize(values.size(), 0.0);
    if (values.size() > 1) {
        const double last = static_cast<double>(values.size() - 1);
        for (std::size_t i = 0; i < values.size(); ++i) coords[i] = static_cast<double>(i) / last - 0.5;
    }
}

double GridAxis::raw_at(double coord) const {
    if (values.size() == 1) return values.front();
    const double pos = (std::clamp(coord, -0.5, 0.5) + 0.5) * static_cast<double>(values.size() - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(std::floor(pos)), values.size() - 2);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

HyperGrid::HyperGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw Error("hyper-parameter grid needs at least one axis");
    for (const auto& a : axes_) size_ *= a.values.size();
}

std::size_t HyperGrid::find_axis(const std::string& name) const {
    for (std::size_t d = 0; d < axes_.size(); ++d) {
        if (axes_[d].name == name) return d;
    }
    return axes_.size();
}

std::vector<std::size_t> HyperGrid::unravel(std::size_t point) const {
    if (point >= size_) throw Error("grid point index out of range");
    std::vector<std::size_t> idx(axes_.size());
    for (std::size_t d = axes_.size(); d-- > 0;) {
        const std::size_t n = axes_[d].values.size();
        idx[d] = point % n;
        point /= n;
    }
    return idx;
}

std::vector<double> HyperGrid::coords(std::size_t point) const {
    const auto idx = unravel(point);
    std::vector<double> out(idx.size());
    for (std::size_t d = 0; d < idx.size(); ++d) out[d] = axes_[d].coords[idx[d]];
    return out;
}

std::vector<double> HyperGrid::raw_values(std::size_t point) const {
    const auto idx = unravel(point);
    std::vector<double> out(idx.size());
    for (std::size_t d = 0; d < idx.size(); ++d) out[d] = axes_[d].values[idx[d]];
    return out;
}

HyperDist HyperDist::centered(std::size_t dims, double init_std) {
    if (!(init_std > 0.0)) throw Error("initial hyper-parameter std must be positive");
    return HyperDist{std::vector<double>(dims, 0.0), std::vector<double>(dims, -2.0 * std::log(init_std))};
}

double HyperDist::precision(std::size_t d) const { return std::exp(log_precision.at(d)); }

namespace {

void require_dims(const HyperGrid& grid, const HyperDist& dist) {
    if (dist.mu.size() != grid.dims() || dist.log_precision.size() != grid.dims()) {
        throw Error("hyper-parameter distribution dimension does not match the grid");
    }
}

}  // namespace

std::vector<double> grid_probs(const HyperGrid& grid, const HyperDist& dist) {
    require_dims(grid, dist);
    const std::size_t dims = grid.dims();
    std::vector<double> logp(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto h = grid.coords(j);
        double e = 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
            const double diff = h[d] - dist.mu[d];
            e -= 0.5 * dist.precision(d) * diff * diff;
        }
        logp[j] = e;
    }
    const double top = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double& v : logp) z += (v = std::exp(v - top));
    for (double& v : logp) v /= z;
    return logp;
}

HyperSample sample(const HyperGrid& grid, const HyperDist& dist, Rng& rng) {
    const auto probs = grid_probs(grid, dist);
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t point = probs.size() - 1;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        cum += probs[j];
        if (u < cum) {
            point = j;
            break;
        }
    }
    return HyperSample{point, grid.coords(point), grid.raw_values(point)};
}

std::vector<double> score(const HyperGrid& grid, const HyperDist& dist, std::size_t point) {
    const std::size_t dims = grid.dims();
    const auto probs = grid_probs(grid, dist);
    if (point >= grid.size()) throw Error("score: point is not on the grid");
    // d/d mu_d log N = A_d (h_d - mu_d); d/d log A_d log N = -A_d (h_d - mu_d)^2 / 2
    // (the Gaussian's own normalizer cancels against the grid sum).
    const auto per_point = [&](std::size_t j, std::vector<double>& out) {
        const auto h = grid.coords(j);
        for (std::size_t d = 0; d < dims; ++d) {
            const double a = dist.precision(d);
            const double diff = h[d] - dist.mu[d];
            out[d] = a * diff;
            out[dims + d] = -0.5 * a * diff * diff;
        }
    };
    std::vector<double> expected(2 * dims, 0.0);
    std::vector<double> tmp(2 * dims);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        per_point(j, tmp);
        for (std::size_t k = 0; k < tmp.size(); ++k) expected[k] += probs[j] * tmp[k];
    }
    std::vector<double> out(2 * dims);
    per_point(point, out);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= expected[k];
    return out;
}

double reward(double loss_before, double loss_after) {
    if (!(loss_before > 0.0)) throw Error("reward: loss before the round must be positive");
    return (loss_before - loss_after) / loss_before;
}

void RewardWindow::push(double r, std::vector<double> s) {
    entries_.push_back(Entry{r, std::move(s)});
    while (entries_.size() > radius_ + 1) entries_.pop_front();
}

double RewardWindow::mean_reward() const {
    if (entries_.empty()) throw Error("reward window is empty");
    double acc = 0.0;
    for (const auto& e : entries_) acc += e.reward;
    return acc / static_cast<double>(entries_.size());
}

std::vector<double> update_direction(const RewardWindow& window) {
    const double baseline = window.mean_reward();
    std::vector<double> dir(window.entries().front().score.size(), 0.0);
    for (const auto& e : window.entries()) {
        if (e.score.size() != dir.size()) throw Error("reward window holds scores of different sizes");
        const double centred = e.reward - baseline;
        for (std::size_t k = 0; k < dir.size(); ++k) dir[k] += centred * e.score[k];
    }
    return dir;
}

HyperDist reinforce_update(const HyperDist& dist, const RewardWindow& window, const TunerUpdateOptions& options) {
    const std::size_t dims = dist.dims();
    const auto dir = update_direction(window);
    if (dir.size() != 2 * dims) throw Error("score size does not match the distribution");
    HyperDist next = dist;
    const double step = options.sign * options.eta_h;
    for (std::size_t d = 0; d < dims; ++d) {
        next.mu[d] = std::clamp(dist.mu[d] + step * dir[d], -0.5, 0.5);
        if (!options.freeze_precision) next.log_precision[d] = dist.log_precision[d] + step * dir[dims + d];
    }
    return next;
}

}  // namespace fedrm
