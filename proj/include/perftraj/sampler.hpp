#pragma once
// Full conditional updates of the blocked Metropolis-within-Gibbs sampler.
//
// Each update_* function redraws one block of the state from its exact full
// conditional (or by an adaptive MH step that leaves it invariant) and touches
// nothing else. The two interweaving moves are:
//   * after (delta, zeta, beta) is redrawn with the deviations
//     beta^(i,s) - beta and beta^(i) - beta held fixed, every lower level is
//     shifted by beta_new - beta_old;
//   * a scale group move lambda_i^2 -> lambda_i^2 / m, c^2 -> c^2 m (and the
//     tau/d analogue) with m drawn from its exact conditional under the
//     multiplicative Haar measure, which preserves every product lambda^2 c^2.

#include "adaptive_mh.hpp"
#include "bernstein.hpp"
#include "design.hpp"
#include "model.hpp"
#include "random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Adaptive MH states for every parameter without a closed-form conditional.
struct SamplerTuning {
    AdaptiveMhState sigma2_a, lambda0, tau0, nu1, nu2, nu_mu, nu_eta, alpha;
    int cone_sweeps = 10;

    SamplerTuning() = default;
    explicit SamplerTuning(const AdaptationSettings& s)
        : sigma2_a(1, s), lambda0(1, s), tau0(1, s), nu1(1, s), nu2(1, s), nu_mu(1, s), nu_eta(1, s), alpha(1, s) {}

    void freeze() {
        for (auto* mh : {&sigma2_a, &lambda0, &tau0, &nu1, &nu2, &nu_mu, &nu_eta, &alpha}) mh->freeze();
    }
};

namespace detail {

inline double log_gamma_prior(double x, const GammaPrior& p) { return (p.shape - 1.0) * std::log(x) - p.rate * x; }

inline double log_inverse_gamma_prior(double x, const InverseGammaPrior& p) {
    return -(p.shape + 1.0) * std::log(x) - p.scale / x;
}

/// Sum over xs of the log Student-t kernel in nu (terms free of nu dropped).
inline double log_t_kernel(double nu, const std::vector<double>& squares) {
    const double n = static_cast<double>(squares.size());
    double total = n * (std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) + 0.5 * nu * std::log(nu));
    for (double x2 : squares) total -= 0.5 * (nu + 1.0) * std::log(nu + x2);
    return total;
}

/// MH update of a degrees-of-freedom parameter on the log scale.
inline double update_nu(double nu, const std::vector<double>& squares, const GammaPrior& prior,
                        AdaptiveMhState& mh, Rng& rng) {
    const auto target = [&](double log_nu) {
        const double v = std::exp(log_nu);
        if (!std::isfinite(v) || v <= 0.0) return -std::numeric_limits<double>::infinity();
        return log_t_kernel(v, squares) + log_gamma_prior(v, prior) + log_nu;
    };
    return std::exp(adaptive_mh_step(mh, std::log(nu), target, rng));
}

/// Precision of the knots F_i under the heavy-tailed random walk.
inline Eigen::MatrixXd knot_precision(const AthleteDesign& d, const AthleteState& a, double sigma2_mu,
                                      double sigma2_eta) {
    const int k = d.knots();
    Eigen::VectorXd w(k);
    w(0) = 1.0 / (a.omega_mu * sigma2_mu);
    for (int s = 1; s < k; ++s) w(s) = 1.0 / (a.omega_eta(s - 1) * sigma2_eta);
    return d.walk.transpose() * w.asDiagonal() * d.walk;
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
    Eigen::MatrixXd out(rows.size(), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = m.row(rows[r]);
    return out;
}

inline Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<int>& rows) {
    Eigen::VectorXd out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out(r) = v(rows[r]);
    return out;
}

}  // namespace detail

// Upper end of the support of sigma2_a. Under the default vague prior the posterior
// tail in sigma2_a is nearly flat when few athletes are fitted; past this point the
// inverse-gamma on sigma_i^2 is a point mass to 1e-4 and the log-density loses precision.
inline constexpr double kMaxErrorShape = 1e8;

struct GigParams {
    double lambda, chi, psi;
};

/// sigma_i^2 given n_i rows and quad = sum e^2/omega + sum kappa^2/phi.
inline InverseGammaPrior error_scale_conditional(double sigma2_a, double sigma2_m, int rows, double quad) {
    return {sigma2_a + rows, sigma2_a / sigma2_m + 0.5 * quad};
}

inline InverseGammaPrior sigma2_m_conditional(const PriorConfig& prior, int athletes, double sigma2_a,
                                              double sum_precision) {
    return {prior.sigma2_m.shape + athletes * sigma2_a, prior.sigma2_m.scale + sigma2_a * sum_precision};
}

/// lambda_i^2 (levels = S_i) or tau_i^2 (levels = 1); weighted_sq sums dev^2 / c^2 over coefficients and levels.
inline GigParams athlete_scale_conditional(double shape, double mean, int num_coeffs, int levels, double weighted_sq) {
    return {shape - 0.5 * num_coeffs * levels, weighted_sq, 2.0 * shape / mean};
}

/// c^2_j or d^2_j given the number of deviations and their sum of dev^2 / lambda^2.
inline GigParams coefficient_scale_conditional(const GammaPrior& prior, int count, double weighted_sq) {
    return {prior.shape - 0.5 * count, weighted_sq, 2.0 * prior.rate};
}

inline InverseGammaPrior sigma2_beta_conditional(const PriorConfig& prior, double beta) {
    return {prior.sigma2_beta.shape + 0.5, prior.sigma2_beta.scale + 0.5 * beta * beta};
}

/// omega, phi, omega_mu or omega_eta given nu and the standardised square x^2.
inline InverseGammaPrior latent_scale_conditional(double nu, double x2) { return {0.5 * (nu + 1.0), 0.5 * (nu + x2)}; }

inline double draw(const InverseGammaPrior& p, Rng& rng) { return rand::inverse_gamma(p.shape, p.scale, rng); }
// Floor for the shrinkage scales lambda_i^2, tau_i^2, c^2, d^2. With a small Gamma
// shape the prior has a spike at zero, and a chain that falls into it can make a
// deviation exactly zero, leaving GIG(lambda <= 0, chi = 0, psi) undefined.
inline constexpr double kMinShrinkScale = 1e-100;

inline double draw(const GigParams& p, Rng& rng) {
    const double chi = p.lambda <= 0.0 ? std::max(p.chi, std::numeric_limits<double>::min()) : p.chi;
    return std::max(rand::gig_sample(p.lambda, chi, p.psi, rng), kMinShrinkScale);
}

/// y - A delta - X zeta: the part of the response left for athlete-level terms and kappa.
inline Eigen::VectorXd fixed_effect_residuals(const ParamState& state, const AthleteDesign& d) {
    Eigen::VectorXd r = d.y - d.poly * state.delta;
    if (d.confounders.cols() > 0) r -= d.confounders * state.zeta;
    return r;
}

/// y - A delta - X zeta - Z F - C beta_i, i.e. eps* + q kappa.
inline Eigen::VectorXd structural_residuals(const ParamState& state, const AthleteDesign& d, int athlete) {
    const AthleteState& a = state.athletes[athlete];
    Eigen::VectorXd r = fixed_effect_residuals(state, d) - d.interp * a.knots;
    for (int k = 0; k < d.rows(); ++k) r(k) -= d.basis.row(k).dot(a.season_beta[d.season[k]]);
    return r;
}

/// y minus the full conditional mean, i.e. eps*.
inline Eigen::VectorXd error_residuals(const ParamState& state, const AthleteDesign& d, int athlete) {
    return structural_residuals(state, d, athlete) - skew_weight(state.alpha) * state.athletes[athlete].kappa;
}

/// Joint draw of (beta^(i), F_i) with every beta^(i,s) integrated out, then each beta^(i,s) given them.
inline void update_athlete_block(ParamState& state, const DesignCache& cache, int athlete, Rng& rng) {
    const AthleteDesign& d = cache.athletes[athlete];
    AthleteState& a = state.athletes[athlete];
    const int g = cache.num_coeffs;
    const int k = d.knots();
    const double q = skew_weight(state.alpha);

    const Eigen::VectorXd r = fixed_effect_residuals(state, d) - q * a.kappa;
    const Eigen::VectorXd err_var = a.sigma2 * a.omega;  // diagonal of sigma^2 W
    const Eigen::VectorXd season_var = a.lambda2 * state.c2;

    Eigen::MatrixXd q1 = Eigen::MatrixXd::Zero(g + k, g + k);
    Eigen::VectorXd p1 = Eigen::VectorXd::Zero(g + k);
    const Eigen::VectorXd level_prec = (a.tau2 * state.d2).cwiseInverse();
    q1.topLeftCorner(g, g).diagonal() = level_prec;
    p1.head(g) = level_prec.cwiseProduct(state.beta);
    q1.bottomRightCorner(k, k) = detail::knot_precision(d, a, state.sigma2_mu, state.sigma2_eta);

    for (int s = 0; s < d.seasons(); ++s) {
        const auto& rows = d.season_rows[s];
        if (rows.empty()) continue;
        const int ns = static_cast<int>(rows.size());
        Eigen::MatrixXd u(ns, g + k);
        u.leftCols(g) = detail::rows_of(d.basis, rows);
        u.rightCols(k) = detail::rows_of(d.interp, rows);
        Eigen::MatrixXd v = u.leftCols(g) * season_var.asDiagonal() * u.leftCols(g).transpose();
        v.diagonal() += detail::rows_of(err_var, rows);
        const auto llt = rand::spd_factor(v);
        q1.noalias() += u.transpose() * llt.solve(u);
        p1.noalias() += u.transpose() * llt.solve(detail::rows_of(r, rows));
    }
    q1 = 0.5 * (q1 + q1.transpose());
    const Eigen::VectorXd theta = rand::mvn_from_precision(q1, p1, rng);
    a.beta = theta.head(g);
    a.knots = theta.tail(k);

    const Eigen::VectorXd prior_prec = season_var.cwiseInverse();
    for (int s = 0; s < d.seasons(); ++s) {
        const auto& rows = d.season_rows[s];
        Eigen::MatrixXd q2 = prior_prec.asDiagonal();
        Eigen::VectorXd b2 = prior_prec.cwiseProduct(a.beta);
        if (!rows.empty()) {
            const Eigen::MatrixXd bs = detail::rows_of(d.basis, rows);
            const Eigen::VectorXd w = detail::rows_of(err_var, rows).cwiseInverse();
            const Eigen::VectorXd rs = detail::rows_of(r, rows) - detail::rows_of(d.interp, rows) * a.knots;
            q2.noalias() += bs.transpose() * w.asDiagonal() * bs;
            b2.noalias() += bs.transpose() * w.cwiseProduct(rs);
        }
        a.season_beta[s] = rand::mvn_from_precision(q2, b2, rng);
    }
}

/// Parameters of the truncated-normal full conditional of one kappa.
struct KappaConditional {
    double mean;
    double variance;
};

inline KappaConditional kappa_conditional(double residual, double alpha, double omega, double phi, double sigma2) {
    const double q = skew_weight(alpha);
    const double denom = 1.0 / phi + q * q / omega;
    return {q * residual / omega / denom, sigma2 / denom};
}

inline void update_kappa(ParamState& state, const DesignCache& cache, Rng& rng) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteDesign& d = cache.athletes[i];
        AthleteState& a = state.athletes[i];
        const Eigen::VectorXd r = structural_residuals(state, d, i);
        for (int k = 0; k < d.rows(); ++k) {
            const auto c = kappa_conditional(r(k), state.alpha, a.omega(k), a.phi(k), a.sigma2);
            a.kappa(k) = rand::truncated_normal(c.mean, c.variance, 0.0, inf, rng);
        }
    }
}

/// Joint update of (delta, zeta, beta) with every F_i integrated out, then each F_i,
/// followed by the interweaving shift of beta^(i) and beta^(i,s).
inline void update_population_block(ParamState& state, const DesignCache& cache, const PriorConfig& prior, Rng& rng,
                                    int cone_sweeps = 10) {
    const int nd = cache.degree + 1;
    const int np = cache.num_confounders;
    const int g = cache.num_coeffs;
    const int dim = nd + np + g;
    const int nfree = nd + np;
    const double q = skew_weight(state.alpha);
    const Eigen::VectorXd beta_old = state.beta;

    Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd linear = Eigen::VectorXd::Zero(dim);

    struct KnotSystem {
        Eigen::LLT<Eigen::MatrixXd> llt;
        Eigen::MatrixXd cross;  // R_i = Z^T W^-1 U*
        Eigen::VectorXd rhs;    // T_i = Z^T W^-1 r**
    };
    std::vector<KnotSystem> knots(cache.num_athletes());

    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteDesign& d = cache.athletes[i];
        const AthleteState& a = state.athletes[i];
        const int n = d.rows();
        Eigen::VectorXd r = d.y - q * a.kappa;
        for (int k = 0; k < n; ++k) r(k) -= d.basis.row(k).dot(a.season_beta[d.season[k]] - beta_old);
        Eigen::MatrixXd u(n, dim);
        u.leftCols(nd) = d.poly;
        if (np > 0) u.middleCols(nd, np) = d.confounders;
        u.rightCols(g) = d.basis;
        const Eigen::VectorXd w = (a.sigma2 * a.omega).cwiseInverse();

        const Eigen::MatrixXd wu = w.asDiagonal() * u;
        const Eigen::MatrixXd ztw = d.interp.transpose() * w.asDiagonal();
        Eigen::MatrixXd psi = detail::knot_precision(d, a, state.sigma2_mu, state.sigma2_eta);
        psi.noalias() += ztw * d.interp;
        KnotSystem ks{rand::spd_factor(psi), ztw * u, ztw * r};
        precision.noalias() += u.transpose() * wu - ks.cross.transpose() * ks.llt.solve(ks.cross);
        linear.noalias() += wu.transpose() * r - ks.cross.transpose() * ks.llt.solve(ks.rhs);
        knots[i] = std::move(ks);
    }
    precision.topLeftCorner(nfree, nfree).diagonal().array() += prior.fixed_effect_precision;
    precision.bottomRightCorner(g, g).diagonal() += state.sigma2_beta.cwiseInverse();
    precision = 0.5 * (precision + precision.transpose());

    const Eigen::VectorXd mean = rand::spd_factor(precision).solve(linear);
    Eigen::VectorXd current(dim);
    current.head(nd) = state.delta;
    if (np > 0) current.segment(nd, np) = state.zeta;
    current.tail(g) = beta_old;
    const std::vector<rand::ConeConstraint> cone{
        {bernstein::stacked_convexity_matrix(cache.max_order), bernstein::cone_sign(prior.direction)}};
    const Eigen::VectorXd theta = rand::truncated_mvn_cone(mean, precision, nfree, cone, rng, current, cone_sweeps);

    state.delta = theta.head(nd);
    state.zeta = theta.segment(nd, np);
    state.beta = theta.tail(g);
    if (!bernstein::satisfies_shape(RbpCoefficientSet(cache.max_order, state.beta), prior.direction))
        throw InvariantError("population coefficients left the shape cone");

    for (int i = 0; i < cache.num_athletes(); ++i) {
        const KnotSystem& ks = knots[i];
        const Eigen::VectorXd rhs = ks.rhs - ks.cross * theta;
        Eigen::VectorXd z(rhs.size());
        for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = rand::std_normal(rng);
        state.athletes[i].knots = ks.llt.solve(rhs) + ks.llt.matrixU().solve(z);
    }

    const Eigen::VectorXd shift = state.beta - beta_old;
    for (auto& a : state.athletes) {
        a.beta += shift;
        for (auto& sb : a.season_beta) sb += shift;
    }
}

/// sigma_i^2, then sigma_a^2 (adaptive MH, log scale), then sigma_m^2.
inline void update_error_scales(ParamState& state, const DesignCache& cache, const PriorConfig& prior,
                                SamplerTuning& tuning, Rng& rng) {
    const int m = cache.num_athletes();
    for (int i = 0; i < m; ++i) {
        AthleteState& a = state.athletes[i];
        const Eigen::VectorXd e = error_residuals(state, cache.athletes[i], i);
        const double quad = (e.array().square() / a.omega.array()).sum() + (a.kappa.array().square() / a.phi.array()).sum();
        a.sigma2 = draw(error_scale_conditional(state.sigma2_a, state.sigma2_m, cache.athletes[i].rows(), quad), rng);
    }

    double sum_log_prec = 0.0;
    double sum_prec = 0.0;
    for (const auto& a : state.athletes) {
        sum_log_prec += -std::log(a.sigma2);
        sum_prec += 1.0 / a.sigma2;
    }
    const double sigma2_m = state.sigma2_m;
    const auto target = [&](double log_shape) {
        const double s = std::exp(log_shape);
        if (!(s > 0.0 && s <= kMaxErrorShape)) return -std::numeric_limits<double>::infinity();
        return detail::log_inverse_gamma_prior(s, prior.sigma2_a) +
               m * (s * std::log(s / sigma2_m) - std::lgamma(s)) + s * sum_log_prec - s / sigma2_m * sum_prec +
               log_shape;
    };
    state.sigma2_a = std::exp(adaptive_mh_step(tuning.sigma2_a, std::log(state.sigma2_a), target, rng));

    state.sigma2_m = draw(sigma2_m_conditional(prior, m, state.sigma2_a, sum_prec), rng);
}

namespace detail {

/// Scale group move: x_i -> x_i / m for the athlete scales, y_g -> y_g m for the
/// coefficient scales, with m ~ GIG(G a_y - M shape, 2 (shape/mean) sum x, 2 b_y sum y).
inline double draw_group_scale(double level_shape, double level_mean, double sum_athlete, const GammaPrior& coeff_prior,
                               double sum_coeff, int num_athletes, int num_coeffs, Rng& rng) {
    const double lambda = num_coeffs * coeff_prior.shape - num_athletes * level_shape;
    const double chi = 2.0 * level_shape / level_mean * sum_athlete;
    const double psi = 2.0 * coeff_prior.rate * sum_coeff;
    return rand::gig_sample(lambda, chi, psi, rng);
}

inline double shape_log_target(double shape, double mean, const GammaPrior& prior, double sum_log, double sum,
                               int m) {
    return log_gamma_prior(shape, prior) + m * (shape * std::log(shape / mean) - std::lgamma(shape)) +
           shape * sum_log - shape / mean * sum;
}

}  // namespace detail

/// lambda_i^2 -> lambda_i^2 / m and c^2 -> c^2 m; every product lambda_i^2 c^2_j is unchanged.
inline void rescale_seasonal_scales(ParamState& state, double m) {
    for (auto& a : state.athletes) a.lambda2 /= m;
    state.c2 *= m;
}

/// The tau/d analogue of rescale_seasonal_scales.
inline void rescale_level_scales(ParamState& state, double m) {
    for (auto& a : state.athletes) a.tau2 /= m;
    state.d2 *= m;
}

/// lambda_i^2, c^2 and their group move; tau_i^2, d^2 and their group move;
/// then lambda_0 (MH), lambda_1, tau_0 (MH), tau_1.
inline void update_shrinkage_family(ParamState& state, const PriorConfig& prior, SamplerTuning& tuning, Rng& rng) {
    const int m = static_cast<int>(state.athletes.size());
    const int g = static_cast<int>(state.beta.size());

    // Seasonal deviations beta^(i,s) - beta^(i).
    int total_seasons = 0;
    Eigen::VectorXd dev_by_coeff = Eigen::VectorXd::Zero(g);  // sum_i sum_s dev^2 / lambda_i^2
    for (auto& a : state.athletes) {
        Eigen::VectorXd sq = Eigen::VectorXd::Zero(g);
        for (const auto& sb : a.season_beta) sq += (sb - a.beta).array().square().matrix();
        const int seasons = static_cast<int>(a.season_beta.size());
        total_seasons += seasons;
        a.lambda2 = draw(
            athlete_scale_conditional(state.lambda0, state.lambda1, g, seasons, sq.cwiseQuotient(state.c2).sum()), rng);
    }
    for (const auto& a : state.athletes)
        for (const auto& sb : a.season_beta) dev_by_coeff += (sb - a.beta).array().square().matrix() / a.lambda2;
    for (int j = 0; j < g; ++j)
        state.c2(j) = draw(coefficient_scale_conditional(prior.c2, total_seasons, dev_by_coeff(j)), rng);
    {
        double sum_lambda2 = 0.0;
        for (const auto& a : state.athletes) sum_lambda2 += a.lambda2;
        const double scale = detail::draw_group_scale(state.lambda0, state.lambda1, sum_lambda2, prior.c2,
                                                      state.c2.sum(), m, g, rng);
        rescale_seasonal_scales(state, scale);
    }

    // Athlete deviations beta^(i) - beta.
    Eigen::VectorXd level_by_coeff = Eigen::VectorXd::Zero(g);
    for (auto& a : state.athletes) {
        const Eigen::VectorXd sq = (a.beta - state.beta).array().square().matrix();
        a.tau2 = draw(athlete_scale_conditional(state.tau0, state.tau1, g, 1, sq.cwiseQuotient(state.d2).sum()), rng);
    }
    for (const auto& a : state.athletes) level_by_coeff += (a.beta - state.beta).array().square().matrix() / a.tau2;
    for (int j = 0; j < g; ++j)
        state.d2(j) = draw(coefficient_scale_conditional(prior.d2, m, level_by_coeff(j)), rng);
    {
        double sum_tau2 = 0.0;
        for (const auto& a : state.athletes) sum_tau2 += a.tau2;
        const double scale =
            detail::draw_group_scale(state.tau0, state.tau1, sum_tau2, prior.d2, state.d2.sum(), m, g, rng);
        rescale_level_scales(state, scale);
    }

    // Hyperparameters of the athlete scales.
    double sum_log_l = 0.0, sum_l = 0.0, sum_log_t = 0.0, sum_t = 0.0;
    for (const auto& a : state.athletes) {
        sum_log_l += std::log(a.lambda2);
        sum_l += a.lambda2;
        sum_log_t += std::log(a.tau2);
        sum_t += a.tau2;
    }
    {
        const double mean = state.lambda1;
        const auto target = [&](double log_shape) {
            const double s = std::exp(log_shape);
            if (!std::isfinite(s) || s <= 0.0) return -std::numeric_limits<double>::infinity();
            return detail::shape_log_target(s, mean, prior.lambda0, sum_log_l, sum_l, m) + log_shape;
        };
        state.lambda0 = std::exp(adaptive_mh_step(tuning.lambda0, std::log(state.lambda0), target, rng));
        state.lambda1 =
            rand::inverse_gamma(prior.lambda1.shape + m * state.lambda0, prior.lambda1.scale + state.lambda0 * sum_l, rng);
    }
    {
        const double mean = state.tau1;
        const auto target = [&](double log_shape) {
            const double s = std::exp(log_shape);
            if (!std::isfinite(s) || s <= 0.0) return -std::numeric_limits<double>::infinity();
            return detail::shape_log_target(s, mean, prior.tau0, sum_log_t, sum_t, m) + log_shape;
        };
        state.tau0 = std::exp(adaptive_mh_step(tuning.tau0, std::log(state.tau0), target, rng));
        state.tau1 = rand::inverse_gamma(prior.tau1.shape + m * state.tau0, prior.tau1.scale + state.tau0 * sum_t, rng);
    }
}

inline void update_sigma2_beta(ParamState& state, const PriorConfig& prior, Rng& rng) {
    for (Eigen::Index j = 0; j < state.beta.size(); ++j)
        state.sigma2_beta(j) = draw(sigma2_beta_conditional(prior, state.beta(j)), rng);
}

inline void update_random_walk_scales(ParamState& state, const PriorConfig& prior, Rng& rng) {
    const int m = static_cast<int>(state.athletes.size());
    double start = 0.0, incr = 0.0;
    int increments = 0;
    for (const auto& a : state.athletes) {
        start += a.knots(0) * a.knots(0) / a.omega_mu;
        for (Eigen::Index s = 0; s + 1 < a.knots.size(); ++s) {
            const double diff = a.knots(s + 1) - a.knots(s);
            incr += diff * diff / a.omega_eta(s);
            ++increments;
        }
    }
    state.sigma2_mu = rand::inverse_gamma(prior.sigma2_mu.shape + 0.5 * m, prior.sigma2_mu.scale + 0.5 * start, rng);
    state.sigma2_eta =
        rand::inverse_gamma(prior.sigma2_eta.shape + 0.5 * increments, prior.sigma2_eta.scale + 0.5 * incr, rng);
}

/// Error scales, coefficient prior variances and random-walk scales together.
inline void update_scale_family(ParamState& state, const DesignCache& cache, const PriorConfig& prior,
                                SamplerTuning& tuning, Rng& rng) {
    update_error_scales(state, cache, prior, tuning, rng);
    update_sigma2_beta(state, prior, rng);
    update_random_walk_scales(state, prior, rng);
}

/// Log full conditional of alpha (up to a constant).
inline double alpha_log_density(double alpha, const ParamState& state, const DesignCache& cache,
                                const PriorConfig& prior) {
    const double q = skew_weight(alpha);
    double total = -0.5 * alpha * alpha / prior.alpha_variance;
    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteState& a = state.athletes[i];
        const Eigen::VectorXd r = structural_residuals(state, cache.athletes[i], i);
        total -= 0.5 * ((r - q * a.kappa).array().square() / a.omega.array()).sum() / a.sigma2;
    }
    return total;
}

/// Derivative of alpha_log_density in alpha.
inline double alpha_log_density_gradient(double alpha, const ParamState& state, const DesignCache& cache,
                                         const PriorConfig& prior) {
    const double q = skew_weight(alpha);
    const double dq = std::pow(1.0 + alpha * alpha, -1.5);
    double total = -alpha / prior.alpha_variance;
    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteState& a = state.athletes[i];
        const Eigen::VectorXd r = structural_residuals(state, cache.athletes[i], i);
        total += dq * ((r - q * a.kappa).array() * a.kappa.array() / a.omega.array()).sum() / a.sigma2;
    }
    return total;
}

/// (nu1, omega), (nu2, phi), (nu_mu, omega_mu), (nu_eta, omega_eta), then alpha.
inline void update_tail_family(ParamState& state, const DesignCache& cache, const PriorConfig& prior,
                               SamplerTuning& tuning, Rng& rng) {
    const int m = cache.num_athletes();

    // nu1 from the Student-t marginal of eps* / sigma_i, then each omega.
    std::vector<Eigen::VectorXd> eps(m);
    std::vector<double> squares;
    squares.reserve(cache.total_rows());
    for (int i = 0; i < m; ++i) {
        eps[i] = error_residuals(state, cache.athletes[i], i);
        for (Eigen::Index k = 0; k < eps[i].size(); ++k)
            squares.push_back(eps[i](k) * eps[i](k) / state.athletes[i].sigma2);
    }
    state.nu1 = detail::update_nu(state.nu1, squares, prior.nu, tuning.nu1, rng);
    for (int i = 0; i < m; ++i) {
        AthleteState& a = state.athletes[i];
        for (Eigen::Index k = 0; k < eps[i].size(); ++k)
            a.omega(k) = draw(latent_scale_conditional(state.nu1, eps[i](k) * eps[i](k) / a.sigma2), rng);
    }

    // nu2 from the half-t marginal of kappa / sigma_i, then each phi.
    squares.clear();
    for (const auto& a : state.athletes)
        for (Eigen::Index k = 0; k < a.kappa.size(); ++k) squares.push_back(a.kappa(k) * a.kappa(k) / a.sigma2);
    state.nu2 = detail::update_nu(state.nu2, squares, prior.nu, tuning.nu2, rng);
    for (auto& a : state.athletes)
        for (Eigen::Index k = 0; k < a.kappa.size(); ++k)
            a.phi(k) = draw(latent_scale_conditional(state.nu2, a.kappa(k) * a.kappa(k) / a.sigma2), rng);

    // nu_mu and the initial-knot scales.
    squares.clear();
    for (const auto& a : state.athletes) squares.push_back(a.knots(0) * a.knots(0) / state.sigma2_mu);
    state.nu_mu = detail::update_nu(state.nu_mu, squares, prior.nu, tuning.nu_mu, rng);
    for (auto& a : state.athletes)
        a.omega_mu = draw(latent_scale_conditional(state.nu_mu, a.knots(0) * a.knots(0) / state.sigma2_mu), rng);

    // nu_eta and the increment scales.
    squares.clear();
    for (const auto& a : state.athletes)
        for (Eigen::Index s = 0; s + 1 < a.knots.size(); ++s) {
            const double diff = a.knots(s + 1) - a.knots(s);
            squares.push_back(diff * diff / state.sigma2_eta);
        }
    state.nu_eta = detail::update_nu(state.nu_eta, squares, prior.nu, tuning.nu_eta, rng);
    for (auto& a : state.athletes)
        for (Eigen::Index s = 0; s + 1 < a.knots.size(); ++s) {
            const double diff = a.knots(s + 1) - a.knots(s);
            a.omega_eta(s) = draw(latent_scale_conditional(state.nu_eta, diff * diff / state.sigma2_eta), rng);
        }

    // alpha on its natural scale.
    const auto target = [&](double alpha) { return alpha_log_density(alpha, state, cache, prior); };
    state.alpha = adaptive_mh_step(tuning.alpha, state.alpha, target, rng);
}

/// One full sweep in the fixed update order.
inline void sweep(ParamState& state, const DesignCache& cache, const PriorConfig& prior, SamplerTuning& tuning,
                  Rng& rng) {
    for (int i = 0; i < cache.num_athletes(); ++i) update_athlete_block(state, cache, i, rng);
    update_kappa(state, cache, rng);
    update_population_block(state, cache, prior, rng, tuning.cone_sweeps);
    update_error_scales(state, cache, prior, tuning, rng);
    update_shrinkage_family(state, prior, tuning, rng);
    update_sigma2_beta(state, prior, rng);
    update_random_walk_scales(state, prior, rng);
    update_tail_family(state, cache, prior, tuning, rng);
}

}  // namespace perftraj
