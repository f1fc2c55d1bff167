#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fedrm/hyper_tuner.hpp"
#include "support/bandit.hpp"
#include "support/gradcheck.hpp"

using namespace fedrm;
using namespace fedrm::testing;

namespace {

HyperDist dist_with_precision(std::vector<double> mu, std::vector<double> precision) {
    HyperDist d;
    d.mu = std::move(mu);
    for (double a : precision) d.log_precision.push_back(std::log(a));
    return d;
}

HyperDist random_dist(std::size_t dims, Rng& rng) {
    HyperDist d;
    for (std::size_t i = 0; i < dims; ++i) {
        d.mu.push_back(rng.uniform(-0.5, 0.5));
        d.log_precision.push_back(rng.uniform(-1.0, 6.0));
    }
    return d;
}

HyperGrid test_grid() {
    return HyperGrid({GridAxis("learning_rate", {0.001, 0.01, 0.03, 0.1}), GridAxis("sgd_iterations", {5, 10, 40})});
}

}  // namespace

TEST_CASE("grid axes and enumeration") {
    const GridAxis a("x", {1, 2, 10});
    CHECK(a.coords == std::vector<double>{-0.5, 0.0, 0.5});
    CHECK(a.raw_at(-0.25) == doctest::Approx(1.5));
    CHECK(a.raw_at(0.25) == doctest::Approx(6.0));
    CHECK(a.raw_at(3.0) == 10.0);
    CHECK(GridAxis("single", {7}).coords == std::vector<double>{0.0});
    CHECK_THROWS_AS(GridAxis("bad", {2, 1}), Error);
    CHECK_THROWS_AS(GridAxis("empty", {}), Error);

    const HyperGrid g = test_grid();
    CHECK(g.size() == 12);
    CHECK(g.unravel(5) == std::vector<std::size_t>{1, 2});
    CHECK(g.raw_values(5) == std::vector<double>{0.01, 40});
    CHECK(g.find_axis("sgd_iterations") == 1);
    CHECK(g.find_axis("momentum") == g.dims());
}

TEST_CASE("grid_probs examples") {
    const HyperGrid one({GridAxis("x", {3})});
    CHECK(grid_probs(one, HyperDist::centered(1, 0.2)) == std::vector<double>{1.0});

    const HyperGrid two({GridAxis("x", {0, 1})});
    const auto p2 = grid_probs(two, HyperDist::centered(1, 0.2));
    CHECK(p2[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p2[1] == doctest::Approx(0.5).epsilon(1e-15));

    const HyperGrid three({GridAxis("x", {0, 1, 2})});
    const auto p3 = grid_probs(three, dist_with_precision({0.0}, {4.0}));
    CHECK(p3[0] == doctest::Approx(0.2741).epsilon(2e-4));
    CHECK(p3[1] == doctest::Approx(0.4519).epsilon(2e-4));
    CHECK(p3[2] == doctest::Approx(0.2741).epsilon(2e-4));
    const double z = 1.0 + 2.0 * std::exp(-0.5);
    CHECK(p3[1] == doctest::Approx(1.0 / z).epsilon(1e-14));
}

TEST_CASE("grid_probs normalization and very sharp distributions") {
    Rng rng(1);
    const HyperGrid g = test_grid();
    for (int i = 0; i < 100; ++i) {
        const auto p = grid_probs(g, random_dist(2, rng));
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
        for (double v : p) CHECK(v >= 0.0);
    }
    // exp(-A d^2 / 2) underflows for every point here; the normalization must still hold.
    const auto sharp = grid_probs(g, dist_with_precision({0.1, 0.2}, {1e6, 1e6}));
    CHECK(std::abs(std::accumulate(sharp.begin(), sharp.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("sampling") {
    const HyperGrid one({GridAxis("x", {3})});
    Rng r1(2);
    for (int i = 0; i < 10; ++i) CHECK(sample(one, HyperDist::centered(1, 0.2), r1).point == 0);

    const HyperGrid g = test_grid();
    const HyperDist d = dist_with_precision({0.1, -0.2}, {8.0, 3.0});
    Rng a(3), b(3);
    for (int i = 0; i < 20; ++i) CHECK(sample(g, d, a).point == sample(g, d, b).point);

    SUBCASE("frequencies over 1e5 draws within 3 sigma") {
        const auto p = grid_probs(g, d);
        std::vector<double> counts(g.size(), 0.0);
        Rng rng(4);
        const double n = 1e5;
        for (int i = 0; i < 100000; ++i) {
            const HyperSample s = sample(g, d, rng);
            CHECK(s.coords == g.coords(s.point));
            counts[s.point] += 1.0;
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sigma = std::sqrt(n * p[i] * (1.0 - p[i]));
            CHECK(std::abs(counts[i] - n * p[i]) <= 3.0 * sigma + 1e-9);
        }
    }
}

TEST_CASE("score") {
    const HyperGrid two({GridAxis("x", {0, 1})});
    const auto s = score(two, dist_with_precision({0.0}, {4.0}), 1);
    CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-14));

    Rng rng(5);
    const HyperGrid g = test_grid();
    for (int rep = 0; rep < 20; ++rep) {
        const HyperDist d = random_dist(2, rng);
        const auto p = grid_probs(g, d);
        // expected score is zero
        std::vector<double> e(4, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto si = score(g, d, i);
            for (std::size_t k = 0; k < 4; ++k) e[k] += p[i] * si[k];
        }
        for (double v : e) CHECK(std::abs(v) < 1e-10);

        // finite differences of log grid_probs
        const std::size_t point = static_cast<std::size_t>(rng.below(g.size()));
        const auto analytic = score(g, d, point);
        const double h = 1e-5;
        for (std::size_t k = 0; k < 4; ++k) {
            HyperDist plus = d, minus = d;
            (k < 2 ? plus.mu[k] : plus.log_precision[k - 2]) += h;
            (k < 2 ? minus.mu[k] : minus.log_precision[k - 2]) -= h;
            const double numeric =
                (std::log(grid_probs(g, plus)[point]) - std::log(grid_probs(g, minus)[point])) / (2 * h);
            CHECK(relative_error(analytic[k], numeric, 1e-6) < 1e-6);
        }
    }
}

TEST_CASE("reward") {
    CHECK(reward(2.0, 1.0) == 0.5);
    CHECK(reward(3.0, 3.0) == 0.0);
    CHECK(reward(1.0, 1.2) == doctest::Approx(-0.2).epsilon(1e-14));
    CHECK_THROWS_AS(reward(0.0, 1.0), Error);
}

TEST_CASE("reward window and update") {
    RewardWindow w(2);
    w.push(1.0, {1.0, 0.0});
    w.push(2.0, {0.0, 1.0});
    w.push(3.0, {1.0, 1.0});
    w.push(4.0, {2.0, -1.0});
    CHECK(w.size() == 3);
    CHECK(w.entries().front().reward == 2.0);
    CHECK(w.mean_reward() == 3.0);
    // (2-3)*(0,1) + 0 + (4-3)*(2,-1) = (2, -2)
    CHECK(update_direction(w) == std::vector<double>{2.0, -2.0});

    HyperDist d{{0.1}, {0.0}};
    const auto up = reinforce_update(d, w, {0.5, 1.0, false});
    CHECK(up.mu[0] == 0.5);  // 0.1 + 1.0, clamped
    CHECK(up.log_precision[0] == doctest::Approx(-1.0));
    const auto down = reinforce_update(d, w, {0.5, -1.0, true});
    CHECK(down.mu[0] == -0.5);  // 0.1 - 1.0, clamped
    CHECK(down.log_precision[0] == 0.0);

    SUBCASE("equal rewards leave psi unchanged") {
        RewardWindow eq(10);
        for (int i = 0; i < 5; ++i) eq.push(0.25, {0.3 * i, -0.7});
        const HyperDist same = reinforce_update(d, eq, {});
        CHECK(same.mu == d.mu);
        CHECK(same.log_precision == d.log_precision);
    }
    SUBCASE("single entry leaves psi unchanged") {
        RewardWindow single(10);
        single.push(0.8, {3.0, 1.0});
        const HyperDist same = reinforce_update(d, single, {});
        CHECK(same.mu == d.mu);
        CHECK(same.log_precision == d.log_precision);
    }
    SUBCASE("centered rewards sum to zero") {
        Rng rng(6);
        RewardWindow big(10);
        for (int i = 0; i < 30; ++i) big.push(rng.normal(), {0.0});
        double s = 0.0;
        for (const auto& e : big.entries()) s += e.reward - big.mean_reward();
        CHECK(std::abs(s) < 1e-12);
    }
    SUBCASE("mu stays inside the box") {
        Rng rng(7);
        const HyperGrid g = test_grid();
        HyperDist cur = HyperDist::centered(2, 0.2);
        RewardWindow win(10);
        for (int t = 0; t < 300; ++t) {
            const auto s = sample(g, cur, rng);
            win.push(10.0 * rng.normal(), score(g, cur, s.point));
            cur = reinforce_update(cur, win, {1.0, 1.0, false});
            for (double m : cur.mu) CHECK((m >= -0.5 && m <= 0.5));
        }
    }
    CHECK_THROWS_AS(reinforce_update(d, RewardWindow(3), {}), Error);
}

TEST_CASE("1-D toy bandit: single-sample REINFORCE directions average to the exact gradient") {
    const HyperGrid g({GridAxis("x", {0, 1, 2, 3, 4, 5, 6, 7})});
    const std::vector<double> h_star{g.axis(0).coords[5]};
    const HyperDist d = dist_with_precision({-0.1}, {30.0});
    const auto exact = exact_reward_gradient(g, d, h_star);
    const auto fd = fd_reward_gradient(g, d, h_star);
    for (std::size_t k = 0; k < 2; ++k) CHECK(exact[k] == doctest::Approx(fd[k]).epsilon(1e-7));

    // Baseline b is the exact expected reward; E[(r - b) score] = grad E[r] since E[score] = 0.
    const auto p = grid_probs(g, d);
    double b = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) b += p[i] * bandit_reward(g.coords(i), h_star);
    Rng rng = Rng::derive(1, StreamTag::test);
    std::vector<double> mean(2, 0.0), sq(2, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto s = sample(g, d, rng);
        const auto sc = score(g, d, s.point);
        const double r = bandit_reward(s.coords, h_star);
        for (std::size_t k = 0; k < 2; ++k) {
            const double v = (r - b) * sc[k];
            mean[k] += v / n;
            sq[k] += v * v / n;
        }
    }
    const double se_precision = std::sqrt((sq[1] - mean[1] * mean[1]) / n);
    MESSAGE("mu rel err " << relative_error(mean[0], exact[0]) << ", log_precision rel err "
                          << relative_error(mean[1], exact[1]) << " (standard error " << se_precision / exact[1]
                          << " relative)");
    CHECK(relative_error(mean[0], exact[0]) < 0.02);
    // The precision component's own sampling noise is about 1-2% of its value at
    // this sample size, so it is held to four standard errors instead.
    CHECK(std::abs(mean[1] - exact[1]) < 4.0 * se_precision);
}
