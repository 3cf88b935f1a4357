#include "perftraj/chain.hpp"
#include "perftraj/summaries.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace perftraj;

namespace {

ParamState one_athlete_state(int max_order, int seasons) {
    StateLayout l;
    l.max_order = max_order;
    l.seasons = {seasons};
    l.rows = {1};
    return empty_state(l);
}

}  // namespace

TEST(Variability, Examples) {
    EXPECT_EQ(within_season_variability(0.0, Eigen::VectorXd::Ones(1), 2), 0.0);
    EXPECT_NEAR(within_season_variability(1.0, Eigen::VectorXd::Ones(1), 2), 2.0 / 15.0, 1e-15);
    EXPECT_NEAR(average_effect_size(2.0, Eigen::VectorXd::Ones(1), 2), 4.0 / 15.0, 1e-15);
    EXPECT_EQ(average_effect_size(0.0, Eigen::VectorXd::Ones(6), 4), 0.0);
    EXPECT_THROW(within_season_variability(1.0, Eigen::VectorXd::Ones(2), 2), std::invalid_argument);
}

TEST(Variability, MatchesPriorMonteCarlo) {
    const int order = 4;
    const int g = bernstein::num_coeffs(order);
    Eigen::VectorXd c2(g);
    for (int j = 0; j < g; ++j) c2(j) = 0.3 + 0.2 * j;
    const double lambda2 = 1.7;
    Rng rng(1);
    const Eigen::MatrixXd gram = bernstein::gram_matrix(order);
    double sum = 0.0;
    const int n = 100'000;
    for (int k = 0; k < n; ++k) {
        Eigen::VectorXd dev(g);
        for (int j = 0; j < g; ++j) dev(j) = std::sqrt(lambda2 * c2(j)) * rand::std_normal(rng);
        sum += dev.dot(gram * dev);
    }
    const double psi = within_season_variability(lambda2, c2, order);
    EXPECT_NEAR(sum / n, psi, 0.02 * psi);
}

TEST(Variability, RankOrderFollowsTau) {
    const Eigen::VectorXd d2 = Eigen::VectorXd::Constant(6, 0.8);
    const std::vector<double> tau{0.3, 2.0, 0.01, 5.0, 1.1};
    std::vector<double> gamma;
    for (double t : tau) gamma.push_back(average_effect_size(t, d2, 4));
    EXPECT_EQ(average_ranks(gamma), average_ranks(tau));
}

TEST(Variability, InvariantUnderGroupRescale) {
    ParamState s = one_athlete_state(3, 1);
    s.c2 << 0.4, 1.3, 0.9;
    s.d2 << 2.0, 0.1, 0.6;
    s.athletes[0].lambda2 = 0.7;
    s.athletes[0].tau2 = 1.9;
    const double psi = within_season_variability(s, 0, 3);
    const double gam = average_effect_size(s, 0, 3);
    rescale_seasonal_scales(s, 4.2);
    rescale_level_scales(s, 0.35);
    EXPECT_NEAR(within_season_variability(s, 0, 3), psi, 1e-14 * psi);
    EXPECT_NEAR(average_effect_size(s, 0, 3), gam, 1e-14 * gam);
}

TEST(Band, SingleDrawHasZeroWidth) {
    ParamState s = one_athlete_state(3, 1);
    s.delta = Eigen::Vector2d(1.0, 0.5);
    const std::vector<ParamState> one{s};
    const auto grid = uniform_grid(18, 30, 13);
    const Band b = trajectory_band(one, {Trajectory::Population}, grid, 24.0, 3);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double v = population_trajectory(s.delta, 24.0, grid[k]);
        EXPECT_EQ(b.median[k], v);
        EXPECT_EQ(b.lower[k], v);
        EXPECT_EQ(b.upper[k], v);
    }
    EXPECT_THROW(trajectory_band(std::vector<ParamState>{}, {Trajectory::Population}, grid, 24.0, 3),
                 std::invalid_argument);
}

TEST(Band, SeasonalEndpointsAreZero) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    std::vector<ParamState> states;
    for (int k = 0; k < 50; ++k) {
        ParamState s = one_athlete_state(4, 2);
        for (auto& sb : s.athletes[0].season_beta)
            for (auto& v : sb) v = nd(rng);
        for (auto& v : s.athletes[0].beta) v = nd(rng);
        states.push_back(s);
    }
    const auto grid = season_grid();
    EXPECT_EQ(grid.size(), 201u);
    for (auto kind : {Trajectory::SeasonSeason, Trajectory::AthleteSeason, Trajectory::PopulationSeason}) {
        const Band b = trajectory_band(states, {kind, 0, 1}, grid, 0.0, 4);
        for (auto* curve : {&b.median, &b.lower, &b.upper}) {
            EXPECT_EQ(curve->front(), 0.0);
            EXPECT_EQ(curve->back(), 0.0);
        }
    }
}

TEST(Band, SymmetricDrawsCentreOnTheCurve) {
    std::vector<ParamState> states;
    for (double c : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        ParamState s = one_athlete_state(2, 1);
        s.delta = Eigen::Vector3d(40.0 + c, 0.0, 0.1);
        states.push_back(s);
    }
    const auto grid = uniform_grid(16, 36, 21);
    const Band b = trajectory_band(states, {Trajectory::Population}, grid, 26.0, 2);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        EXPECT_NEAR(b.median[k], 40.0 + 0.1 * std::pow(grid[k] - 26.0, 2), 1e-12);
        EXPECT_LT(b.lower[k], b.median[k]);
        EXPECT_GT(b.upper[k], b.median[k]);
    }
}

TEST(Band, FittedCurveAddsComponents) {
    ParamState s = one_athlete_state(2, 2);
    s.delta = Eigen::Vector2d(10.0, -1.0);
    s.athletes[0].knots << 0.0, 1.0, 3.0;
    s.athletes[0].season_beta[1](0) = 2.0;
    const TrajectorySpec spec{Trajectory::Fitted, 0, 0};
    // t = 1.5: age 21.5, trend 2.0, seasonal 2 * b_{2,1}(0.5) = 1.
    EXPECT_NEAR(eval_trajectory(s, spec, 1.5, 20.0, 2, 1.0, 20.0), 10.0 - 1.5 + 2.0 + 1.0, 1e-12);
}

TEST(Rmise, Examples) {
    const auto grid = uniform_grid(0.0, 1.0, 1001);
    std::vector<double> truth(grid.size()), est(grid.size()), shifted(grid.size()), lin(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        truth[k] = std::sin(grid[k]);
        est[k] = truth[k];
        shifted[k] = truth[k] + 0.3;
        lin[k] = truth[k] + grid[k];
    }
    EXPECT_EQ(rmise(grid, est, truth), 0.0);
    EXPECT_NEAR(rmise(grid, shifted, truth), 0.09, 1e-12);
    EXPECT_NEAR(rmise(grid, lin, truth), 1.0 / 3.0, 1e-6);
    EXPECT_THROW(rmise(grid, std::vector<double>(3), truth), std::invalid_argument);
}

TEST(Armse, Examples) {
    const std::vector<Eigen::VectorXd> truth{Eigen::Vector2d(1.0, 2.0)};
    EXPECT_EQ(armse(truth, truth), 0.0);
    const std::vector<Eigen::VectorXd> off{Eigen::Vector2d(2.0, 1.0)};
    EXPECT_DOUBLE_EQ(armse(off, truth), 1.0);
    const std::vector<Eigen::VectorXd> off2{Eigen::Vector2d(3.0, 0.0)};
    EXPECT_DOUBLE_EQ(armse(off2, truth), 4.0);
    EXPECT_THROW(armse(off, {}), std::invalid_argument);
}

TEST(Spearman, Examples) {
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-15);
    EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), std::domain_error);
    EXPECT_THROW(spearman({1}, {1}), std::invalid_argument);
}

TEST(Spearman, TiesUseAverageRanks) {
    EXPECT_EQ(average_ranks({3.0, 1.0, 3.0, 2.0}), (std::vector<double>{3.5, 1.0, 3.5, 2.0}));
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> u(0, 5);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> x(12), y(12);
        for (auto& v : x) v = u(rng);
        for (auto& v : y) v = u(rng);
        try {
            const double r = spearman(x, y);
            EXPECT_GE(r, -1.0);
            EXPECT_LE(r, 1.0);
        } catch (const std::domain_error&) {
        }
    }
}

TEST(Quantile, TypeSeven) {
    EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(median({5}), 5.0);
    EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Psrf, Examples) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    Eigen::VectorXd a(1000);
    for (auto& v : a) v = nd(rng);
    Eigen::VectorXd b = a.reverse();
    EXPECT_NEAR(psrf({a, b}), 1.0, 1e-3);

    Eigen::VectorXd far = a.array() + 100.0;
    EXPECT_GT(psrf({a, far}), 1.2);

    Eigen::VectorXd x(10'000), y(10'000);
    for (auto& v : x) v = nd(rng);
    for (auto& v : y) v = nd(rng);
    EXPECT_NEAR(psrf({x, y}), 1.0, 0.01);
    EXPECT_THROW(psrf({x}), std::invalid_argument);
}

TEST(Ess, WhiteNoise) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(20'000);
    for (auto& v : x) v = nd(rng);
    EXPECT_NEAR(ess(x), 20'000, 0.15 * 20'000);
}

TEST(Ess, Ar1) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    const double rho = 0.9;
    const int n = 100'000;
    Eigen::VectorXd x(n);
    x(0) = nd(rng) / std::sqrt(1 - rho * rho);
    for (int k = 1; k < n; ++k) x(k) = rho * x(k - 1) + nd(rng);
    const double oracle = n * (1 - rho) / (1 + rho);
    EXPECT_NEAR(ess(x), oracle, 0.2 * oracle);
}

TEST(Ess, AlternatingIsClamped) {
    Eigen::VectorXd x(1000);
    for (int k = 0; k < 1000; ++k) x(k) = k % 2 ? 1.0 : -1.0;
    EXPECT_EQ(ess(x), 1000.0);
    EXPECT_THROW(ess(Eigen::VectorXd::Zero(5)), std::invalid_argument);
}
