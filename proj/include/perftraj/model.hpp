#pragma once
// Data model, parameter state and trajectory evaluation.
//
// Performance of athlete i at age a and calendar time t (years since the start
// of the athlete's first season) is
//
//   y = g(a) + f_i(t) + h*_{i,s}(z) + x.zeta + eps,
//
// with g a polynomial in (a - mean age), f_i piecewise linear between
// season-start knots eta_{i,1..S_i+1}, h*_{i,s} a sum of restricted Bernstein
// polynomials vanishing at both season endpoints, and
//
//   eps = eps* + alpha / sqrt(1 + alpha^2) * kappa,
//   eps* ~ N(0, omega sigma_i^2),  kappa ~ N+(0, phi sigma_i^2),
//   omega ~ IG(nu1/2, nu1/2),      phi ~ IG(nu2/2, nu2/2).

#include "bernstein.hpp"
#include "random.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Performance {
    double value = 0.0;          // y
    double age = 0.0;            // years
    double time = 0.0;           // years since the athlete's first season start
    int season = 1;              // 1-based
    double season_fraction = 0;  // z in [0,1)
    Eigen::VectorXd confounders; // length p
};

struct Athlete {
    std::string id;
    std::vector<Performance> performances;  // ordered by time
    int num_seasons = 0;                    // S_i
    double age_at_start = 0.0;              // age at time 0

    int size() const { return static_cast<int>(performances.size()); }
};

struct Dataset {
    std::vector<Athlete> athletes;
    double season_length = 1.0;  // Delta
    std::vector<std::string> confounder_names;

    int num_athletes() const { return static_cast<int>(athletes.size()); }
    int num_confounders() const { return static_cast<int>(confounder_names.size()); }
    int num_performances() const {
        int total = 0;
        for (const auto& a : athletes) total += a.size();
        return total;
    }
    double mean_age() const {
        double total = 0.0;
        int count = 0;
        for (const auto& a : athletes)
            for (const auto& p : a.performances) {
                total += p.age;
                ++count;
            }
        return count == 0 ? 0.0 : total / count;
    }
};

/// Throws DataError describing the first broken invariant.
inline void validate(const Dataset& data) {
    if (!(data.season_length > 0.0)) throw DataError("season length must be positive");
    const int p = data.num_confounders();
    for (const auto& athlete : data.athletes) {
        const std::string who = "athlete " + athlete.id + ": ";
        if (athlete.performances.empty()) throw DataError(who + "no performances");
        if (athlete.num_seasons < 1) throw DataError(who + "no seasons");
        double prev_time = -std::numeric_limits<double>::infinity();
        double prev_age = -std::numeric_limits<double>::infinity();
        for (const auto& perf : athlete.performances) {
            if (!std::isfinite(perf.value) || !std::isfinite(perf.age) || !std::isfinite(perf.time))
                throw DataError(who + "non-finite performance record");
            if (perf.season < 1 || perf.season > athlete.num_seasons)
                throw DataError(who + "season index outside 1..S_i");
            if (!(perf.season_fraction >= 0.0 && perf.season_fraction < 1.0))
                throw DataError(who + "season fraction outside [0,1)");
            const double mapped = (perf.season - 1 + perf.season_fraction) * data.season_length;
            if (std::abs(mapped - perf.time) > 1e-9)
                throw DataError(who + "calendar time inconsistent with season and fraction");
            if (perf.time < prev_time) throw DataError(who + "performances not ordered by time");
            if (perf.age < prev_age) throw DataError(who + "age decreases with time");
            if (perf.confounders.size() != p) throw DataError(who + "confounder vector has wrong length");
            if (!perf.confounders.allFinite()) throw DataError(who + "non-finite confounder");
            prev_time = perf.time;
            prev_age = perf.age;
        }
    }
}

struct GammaPrior {
    double shape;
    double rate;
};

struct InverseGammaPrior {
    double shape;
    double scale;
};

struct PriorConfig {
    int degree = 4;     // d
    int max_order = 4;  // N
    Improvement direction = Improvement::Negative;
    double mean_age = 0.0;  // a-bar, frozen from the fitted data

    // Flat prior on (delta, zeta) when zero; otherwise N(0, 1/precision) each.
    double fixed_effect_precision = 0.0;

    GammaPrior lambda0{1.0, 1.0};  // Ex(1)
    GammaPrior tau0{1.0, 1.0};
    InverseGammaPrior lambda1{0.001, 0.001};
    InverseGammaPrior tau1{0.001, 0.001};
    InverseGammaPrior sigma2_a{0.001, 0.001};
    InverseGammaPrior sigma2_m{0.001, 0.001};
    InverseGammaPrior sigma2_mu{0.001, 0.001};
    InverseGammaPrior sigma2_eta{0.001, 0.001};
    GammaPrior nu{2.0, 0.1};  // shared by nu1, nu2, nu_mu, nu_eta
    double alpha_variance = 9.0;
    GammaPrior c2{5.0, 5.0};
    GammaPrior d2{5.0, 5.0};
    InverseGammaPrior sigma2_beta{5.0, 5.0};

    int num_coeffs() const { return bernstein::num_coeffs(max_order); }
};

inline void validate(const PriorConfig& prior) {
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("prior: ") + what + " must be positive");
    };
    if (prior.degree < 0) throw std::invalid_argument("prior: degree must be >= 0");
    if (prior.max_order < 2) throw std::invalid_argument("prior: max_order must be >= 2");
    if (prior.fixed_effect_precision < 0.0) throw std::invalid_argument("prior: fixed effect precision must be >= 0");
    for (const auto* g : {&prior.lambda0, &prior.tau0, &prior.nu, &prior.c2, &prior.d2}) {
        positive(g->shape, "gamma shape");
        positive(g->rate, "gamma rate");
    }
    for (const auto* ig : {&prior.lambda1, &prior.tau1, &prior.sigma2_a, &prior.sigma2_m, &prior.sigma2_mu,
                           &prior.sigma2_eta, &prior.sigma2_beta}) {
        positive(ig->shape, "inverse-gamma shape");
        positive(ig->scale, "inverse-gamma scale");
    }
    positive(prior.alpha_variance, "alpha variance");
}

struct AthleteState {
    double sigma2 = 1.0;
    double lambda2 = 1.0;
    double tau2 = 1.0;
    Eigen::VectorXd beta;                 // beta^(i), length G
    std::vector<Eigen::VectorXd> season_beta;  // beta^(i,s), S_i vectors of length G
    Eigen::VectorXd knots;                // F_i = (eta_1 .. eta_{S_i+1})
    double omega_mu = 1.0;
    Eigen::VectorXd omega_eta;  // one per season increment, length S_i
    // Per-performance latents; empty in snapshots recorded without latents.
    Eigen::VectorXd omega;
    Eigen::VectorXd phi;
    Eigen::VectorXd kappa;
};

struct ParamState {
    Eigen::VectorXd delta;  // length d+1
    Eigen::VectorXd zeta;   // length p
    double alpha = 0.0;
    double nu1 = 20.0;
    double nu2 = 20.0;
    double nu_mu = 20.0;
    double nu_eta = 20.0;
    double sigma2_a = 1.0;
    double sigma2_m = 1.0;
    double sigma2_mu = 1.0;
    double sigma2_eta = 1.0;
    double lambda0 = 1.0;
    double lambda1 = 1.0;
    double tau0 = 1.0;
    double tau1 = 1.0;
    Eigen::VectorXd c2;           // length G
    Eigen::VectorXd d2;           // length G
    Eigen::VectorXd beta;         // population coefficients, shape-constrained
    Eigen::VectorXd sigma2_beta;  // length G
    std::vector<AthleteState> athletes;

    bool has_latents() const { return !athletes.empty() && athletes.front().kappa.size() > 0; }
};

/// alpha / sqrt(1 + alpha^2)
inline double skew_weight(double alpha) { return alpha / std::sqrt(1.0 + alpha * alpha); }

inline double population_trajectory(const Eigen::VectorXd& delta, double mean_age, double age) {
    double value = 0.0;
    double power = 1.0;
    const double centred = age - mean_age;
    for (Eigen::Index k = 0; k < delta.size(); ++k) {
        value += delta(k) * power;
        power *= centred;
    }
    return value;
}

/// Linear interpolation of the season-start knots at calendar time t.
inline double trend_trajectory(const Eigen::VectorXd& knots, double season_length, double t) {
    const int seasons = static_cast<int>(knots.size()) - 1;
    if (seasons < 1) throw std::invalid_argument("trend_trajectory: need at least two knots");
    const double end = seasons * season_length;
    if (!(t >= 0.0 && t <= end + 1e-12)) throw std::out_of_range("trend_trajectory: time outside the career span");
    if (t >= end) return knots(seasons);
    const double scaled = t / season_length;
    int s = static_cast<int>(std::floor(scaled));  // 0-based season
    s = std::min(s, seasons - 1);
    const double z = scaled - s;
    return knots(s) * (1.0 - z) + knots(s + 1) * z;
}

/// Conditional mean of y given every parameter and latent, for performance k of athlete i.
inline double mean_response(const ParamState& state, const PriorConfig& prior, int athlete, const Performance& obs,
                            double kappa) {
    const AthleteState& a = state.athletes.at(athlete);
    double value = population_trajectory(state.delta, prior.mean_age, obs.age);
    const int s = obs.season - 1;
    value += a.knots(s) * (1.0 - obs.season_fraction) + a.knots(s + 1) * obs.season_fraction;
    value += bernstein::eval_rbp(prior.max_order, a.season_beta.at(s), obs.season_fraction);
    if (obs.confounders.size() > 0) value += obs.confounders.dot(state.zeta);
    value += skew_weight(state.alpha) * kappa;
    return value;
}

/// One draw of eps from the two-scale skew construction.
inline double sample_error(double alpha, double nu1, double nu2, double sigma2, Rng& rng) {
    if (!(nu1 > 0.0) || !(nu2 > 0.0) || !(sigma2 > 0.0))
        throw std::invalid_argument("sample_error: nu1, nu2 and sigma2 must be positive");
    const double omega = std::isinf(nu1) ? 1.0 : rand::inverse_gamma(nu1 / 2.0, nu1 / 2.0, rng);
    const double phi = std::isinf(nu2) ? 1.0 : rand::inverse_gamma(nu2 / 2.0, nu2 / 2.0, rng);
    const double eps_star = rand::normal(0.0, omega * sigma2, rng);
    const double kappa = std::abs(rand::normal(0.0, phi * sigma2, rng));
    return eps_star + skew_weight(alpha) * kappa;
}

}  // namespace perftraj
