#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "fedrm/rng.hpp"
#include "fedrm/tensor.hpp"

namespace fedrm {

/// One tunable hyper-parameter: its raw allowed values (ascending) and their
/// normalized coordinates. Coordinates are assigned by rank, equally spaced
/// over [-0.5, 0.5], so every axis has zero mean and the same scale whatever
/// the spacing of the raw values.
struct GridAxis {
    std::string name;
    std::vector<double> values;
    std::vector<double> coords;

    GridAxis(std::string name, std::vector<double> values);

    /// Raw value at a normalized coordinate, interpolating linearly between
    /// neighbouring grid values. Coordinates outside [-0.5, 0.5] are clamped.
    double raw_at(double coord) const;
};

/// Cartesian product of the axes. Points are enumerated row-major with the
/// last axis varying fastest.
class HyperGrid {
public:
    explicit HyperGrid(std::vector<GridAxis> axes);

    std::size_t dims() const noexcept { return axes_.size(); }
    std::size_t size() const noexcept { return size_; }
    const std::vector<GridAxis>& axes() const noexcept { return axes_; }
    const GridAxis& axis(std::size_t d) const { return axes_.at(d); }
    /// Index of the axis with this name, or dims() when absent.
    std::size_t find_axis(const std::string& name) const;

    /// Per-axis value indices of a flat point index.
    std::vector<std::size_t> unravel(std::size_t point) const;
    std::vector<double> coords(std::size_t point) const;
    std::vector<double> raw_values(std::size_t point) const;

private:
    std::vector<GridAxis> axes_;
    std::size_t size_ = 1;
};

/// Discrete Gaussian over the grid with diagonal precision
/// A = exp(log_precision), mean mu in normalized coordinates.
struct HyperDist {
    std::vector<double> mu;
    std::vector<double> log_precision;

    /// mu at the grid centre (0) and per-axis standard deviation `init_std`.
    static HyperDist centered(std::size_t dims, double init_std);

    std::size_t dims() const noexcept { return mu.size(); }
    double precision(std::size_t d) const;
};

/// P(h | psi) for every grid point, in grid order.
std::vector<double> grid_probs(const HyperGrid& grid, const HyperDist& dist);

struct HyperSample {
    std::size_t point = 0;
    std::vector<double> coords;
    std::vector<double> raw;
};

HyperSample sample(const HyperGrid& grid, const HyperDist& dist, Rng& rng);

/// Gradient of log P(h | psi) at grid point `point`, laid out as
/// [d/d mu (dims entries), d/d log_precision (dims entries)].
/// The normalizer's contribution is computed exactly over the finite grid.
std::vector<double> score(const HyperGrid& grid, const HyperDist& dist, std::size_t point);

/// Relative loss reduction (before - after) / before. Throws Error when
/// before <= 0.
double reward(double loss_before, double loss_after);

/// The most recent rewards and the scores of the samples that earned them.
class RewardWindow {
public:
    struct Entry {
        double reward = 0.0;
        std::vector<double> score;
    };

    /// Holds at most radius + 1 entries.
    explicit RewardWindow(std::size_t radius) : radius_(radius) {}

    void push(double reward, std::vector<double> score);
    std::size_t radius() const noexcept { return radius_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::deque<Entry>& entries() const noexcept { return entries_; }
    double mean_reward() const;

private:
    std::size_t radius_;
    std::deque<Entry> entries_;
};

struct TunerUpdateOptions {
    double eta_h = 0.1;
    /// +1 ascends the expected reward; -1 follows the printed minus sign.
    double sign = 1.0;
    bool freeze_precision = false;
};

/// Sum over the window of (r_tau - mean r) * score_tau: the unscaled step.
std::vector<double> update_direction(const RewardWindow& window);

/// psi + sign * eta_h * update_direction(window), then mu clamped to
/// [-0.5, 0.5]. Throws Error on an empty window.
HyperDist reinforce_update(const HyperDist& dist, const RewardWindow& window, const TunerUpdateOptions& options);

}  // namespace fedrm
