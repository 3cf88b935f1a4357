#pragma once
// Posterior summaries, simulation-study metrics and convergence diagnostics.

#include "bernstein.hpp"
#include "chain.hpp"
#include "model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

/// Psi_i = lambda_i^2 sum_{n,v} c2_{n,v} B_{n,n,v,v}.
inline double within_season_variability(double lambda2, const Eigen::VectorXd& c2, int max_order) {
    const Eigen::MatrixXd gram = bernstein::gram_matrix(max_order);
    if (c2.size() != gram.rows()) throw std::invalid_argument("within_season_variability: wrong scale vector length");
    return lambda2 * gram.diagonal().dot(c2);
}

inline double within_season_variability(const ParamState& s, int athlete, int max_order) {
    return within_season_variability(s.athletes.at(athlete).lambda2, s.c2, max_order);
}

/// Gamma_i = tau_i^2 sum_{n,v} d2_{n,v} B_{n,n,v,v}.
inline double average_effect_size(double tau2, const Eigen::VectorXd& d2, int max_order) {
    return within_season_variability(tau2, d2, max_order);
}

inline double average_effect_size(const ParamState& s, int athlete, int max_order) {
    return average_effect_size(s.athletes.at(athlete).tau2, s.d2, max_order);
}

/// Linear-interpolation sample quantile (the common "type 7" definition).
inline double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) throw std::invalid_argument("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level outside [0,1]");
    std::sort(xs.begin(), xs.end());
    const double h = p * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
    if (points < 2) throw std::invalid_argument("grid needs at least two points");
    std::vector<double> g(points);
    for (int k = 0; k < points; ++k) g[k] = lo + (hi - lo) * k / (points - 1);
    g.back() = hi;
    return g;
}

/// Default within-season grid: 201 points on [0,1].
inline std::vector<double> season_grid(int points = 201) { return uniform_grid(0.0, 1.0, points); }

enum class Trajectory {
    Population,         // g(age)
    Trend,              // f_i(t)
    PopulationSeason,   // h*(z)
    AthleteSeason,      // h*_i(z)
    SeasonSeason,       // h*_{i,s}(z)
    Fitted              // g(a_i0 + t) + f_i(t) + h*_{i,s}(z) at calendar time t, baseline confounders
};

struct TrajectorySpec {
    Trajectory kind = Trajectory::Population;
    int athlete = 0;  // 0-based
    int season = 0;   // 0-based
};

/// Evaluate one trajectory of one state at x (age, time or season fraction depending on kind).
inline double eval_trajectory(const ParamState& s, const TrajectorySpec& spec, double x, double mean_age,
                              int max_order, double season_length = 1.0, double age_at_start = 0.0) {
    switch (spec.kind) {
        case Trajectory::Population: return population_trajectory(s.delta, mean_age, x);
        case Trajectory::Trend: return trend_trajectory(s.athletes.at(spec.athlete).knots, season_length, x);
        case Trajectory::PopulationSeason: return bernstein::eval_rbp(max_order, s.beta, x);
        case Trajectory::AthleteSeason: return bernstein::eval_rbp(max_order, s.athletes.at(spec.athlete).beta, x);
        case Trajectory::SeasonSeason:
            return bernstein::eval_rbp(max_order, s.athletes.at(spec.athlete).season_beta.at(spec.season), x);
        case Trajectory::Fitted: {
            const AthleteState& a = s.athletes.at(spec.athlete);
            const int seasons = static_cast<int>(a.season_beta.size());
            double scaled = x / season_length;
            int sidx = std::min(static_cast<int>(std::floor(scaled)), seasons - 1);
            sidx = std::max(sidx, 0);
            const double z = std::clamp(scaled - sidx, 0.0, 1.0);
            return population_trajectory(s.delta, mean_age, age_at_start + x) +
                   trend_trajectory(a.knots, season_length, x) + bernstein::eval_rbp(max_order, a.season_beta[sidx], z);
        }
    }
    throw std::logic_error("unknown trajectory kind");
}

struct Band {
    std::vector<double> grid, median, lower, upper;
};

/// Pointwise posterior median and equal-tailed credible band over a set of states.
template <typename States>
Band trajectory_band(const States& states, const TrajectorySpec& spec, const std::vector<double>& grid,
                     double mean_age, int max_order, double season_length = 1.0, double age_at_start = 0.0,
                     double level = 0.95) {
    if (states.empty()) throw std::invalid_argument("trajectory_band: no draws");
    Band band;
    band.grid = grid;
    const double tail = 0.5 * (1.0 - level);
    std::vector<double> values(states.size());
    for (double x : grid) {
        for (std::size_t k = 0; k < states.size(); ++k)
            values[k] = eval_trajectory(states[k], spec, x, mean_age, max_order, season_length, age_at_start);
        band.median.push_back(median(values));
        band.lower.push_back(quantile(values, tail));
        band.upper.push_back(quantile(values, 1.0 - tail));
    }
    return band;
}

/// All states of a draw set in chain-major order.
inline std::vector<ParamState> all_states(const PosteriorDraws& draws) {
    std::vector<ParamState> out;
    out.reserve(static_cast<std::size_t>(draws.num_chains() * draws.draws_per_chain()));
    draws.for_each_state([&](ParamState s) { out.push_back(std::move(s)); });
    return out;
}

/// Trapezoid rule for the integral of (estimate - truth)^2 over the grid. No square root is taken.
inline double rmise(const std::vector<double>& grid, const std::vector<double>& estimate,
                    const std::vector<double>& truth) {
    if (grid.size() != estimate.size() || grid.size() != truth.size() || grid.size() < 2)
        throw std::invalid_argument("rmise: grid and curves must share at least two points");
    double total = 0.0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const double e0 = estimate[k - 1] - truth[k - 1];
        const double e1 = estimate[k] - truth[k];
        total += 0.5 * (grid[k] - grid[k - 1]) * (e0 * e0 + e1 * e1);
    }
    return total;
}

/// Mean squared error over matched knot sets (outer index athlete, inner knot).
inline double armse(const std::vector<Eigen::VectorXd>& estimates, const std::vector<Eigen::VectorXd>& truths) {
    if (estimates.size() != truths.size()) throw std::invalid_argument("armse: athlete count mismatch");
    double total = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        if (estimates[i].size() != truths[i].size()) throw std::invalid_argument("armse: knot count mismatch");
        total += (estimates[i] - truths[i]).squaredNorm();
        count += estimates[i].size();
    }
    if (count == 0) throw std::invalid_argument("armse: no knots");
    return total / static_cast<double>(count);
}

/// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxy += (xs[k] - mx) * (ys[k] - my);
        sxx += (xs[k] - mx) * (xs[k] - mx);
        syy += (ys[k] - my) * (ys[k] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw std::domain_error("correlation undefined for a constant vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    if (xs.size() < 2) throw std::invalid_argument("spearman: need at least two points");
    return pearson(average_ranks(xs), average_ranks(ys));
}

/// Gelman-Rubin potential scale reduction factor sqrt(V / W).
inline double psrf(const std::vector<Eigen::VectorXd>& chains) {
    if (chains.size() < 2) throw std::invalid_argument("psrf: need at least two chains");
    const Eigen::Index n = chains.front().size();
    if (n < 2) throw std::invalid_argument("psrf: chains need at least two draws");
    for (const auto& c : chains)
        if (c.size() != n) throw std::invalid_argument("psrf: chains differ in length");
    const double m = static_cast<double>(chains.size());
    Eigen::VectorXd means(chains.size());
    double within = 0.0;
    for (std::size_t j = 0; j < chains.size(); ++j) {
        means(j) = chains[j].mean();
        within += (chains[j].array() - means(j)).square().sum() / static_cast<double>(n - 1);
    }
    within /= m;
    const double between = static_cast<double>(n) * (means.array() - means.mean()).square().sum() / (m - 1.0);
    const double nn = static_cast<double>(n);
    const double pooled = (nn - 1.0) / nn * within + between / nn;
    if (within <= 0.0) return between <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(pooled / within);
}

/// Effective sample size with Geyer's initial positive sequence; clamped to the trace length.
inline double ess(const Eigen::VectorXd& trace) {
    const Eigen::Index n = trace.size();
    if (n < 10) throw std::invalid_argument("ess: trace needs at least 10 values");
    const Eigen::VectorXd x = trace.array() - trace.mean();
    const double c0 = x.squaredNorm() / static_cast<double>(n);
    if (c0 <= 0.0) return static_cast<double>(n);
    auto rho = [&](Eigen::Index lag) {
        return x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n) / c0;
    };
    // Pairs Gamma_k = rho_{2k} + rho_{2k+1}, summed while positive.
    double sum_pairs = 0.0;
    for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
        const double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
        if (pair <= 0.0) break;
        sum_pairs += pair;
    }
    // tau = -1 + 2 sum Gamma_k
    const double tau = -1.0 + 2.0 * sum_pairs;
    const double value = tau > 0.0 ? static_cast<double>(n) / tau : static_cast<double>(n);
    return std::min(value, static_cast<double>(n));
}

/// Sum of per-chain effective sample sizes.
inline double ess(const std::vector<Eigen::VectorXd>& chains) {
    double total = 0.0;
    for (const auto& c : chains) total += ess(c);
    return total;
}

}  // namespace perftraj
