#pragma once
// Chain orchestration: initial state, prior simulation, flat parameter layout
// and the multi-chain driver.

#include "adaptive_mh.hpp"
#include "bernstein.hpp"
#include "design.hpp"
#include "model.hpp"
#include "random.hpp"
#include "sampler.hpp"

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace perftraj {

struct ChainConfig {
    long total_iterations = 50000;
    long burn_in = 30000;
    long thin = 20;
    int num_chains = 2;
    std::uint64_t seed = 1;
    AdaptationSettings adaptation{};
    bool record_latents = false;  // keep omega, phi, kappa in every snapshot
    int cone_sweeps = 10;
    bool parallel = true;         // one thread per chain

    long recorded_per_chain() const { return thin < 1 ? 0 : (total_iterations - burn_in) / thin; }
};

inline void validate(const ChainConfig& c) {
    if (c.total_iterations < 0) throw std::invalid_argument("chain: total iterations must be >= 0");
    if (c.burn_in < 0 || c.burn_in > c.total_iterations)
        throw std::invalid_argument("chain: burn-in must lie in [0, total iterations]");
    if (c.thin < 1) throw std::invalid_argument("chain: thinning must be >= 1");
    if (c.num_chains < 1) throw std::invalid_argument("chain: need at least one chain");
    if (c.cone_sweeps < 1) throw std::invalid_argument("chain: cone sweeps must be >= 1");
}

/// Shape information needed to map a ParamState to a flat vector and back.
struct StateLayout {
    int degree = 0;
    int num_confounders = 0;
    int max_order = 2;
    std::vector<int> seasons;  // S_i
    std::vector<int> rows;     // n_i
    bool latents = false;

    int num_coeffs() const { return bernstein::num_coeffs(max_order); }
    int num_athletes() const { return static_cast<int>(seasons.size()); }

    bool operator==(const StateLayout&) const = default;
};

inline StateLayout make_layout(const DesignCache& cache, bool latents) {
    StateLayout l;
    l.degree = cache.degree;
    l.num_confounders = cache.num_confounders;
    l.max_order = cache.max_order;
    l.latents = latents;
    for (const auto& a : cache.athletes) {
        l.seasons.push_back(a.seasons());
        l.rows.push_back(a.rows());
    }
    return l;
}

namespace detail {

// Visits every stored quantity in a fixed order. The visitor receives a name
// and a reference, so the same walk serves naming, flattening and restoring.
template <typename State, typename Visitor>
void walk_state(State& s, const StateLayout& l, Visitor&& visit) {
    auto vec = [&](const std::string& base, auto& v) {
        for (Eigen::Index j = 0; j < v.size(); ++j) visit(base + "[" + std::to_string(j + 1) + "]", v(j));
    };
    vec("delta", s.delta);
    vec("zeta", s.zeta);
    visit("alpha", s.alpha);
    visit("nu1", s.nu1);
    visit("nu2", s.nu2);
    visit("nu_mu", s.nu_mu);
    visit("nu_eta", s.nu_eta);
    visit("sigma2_a", s.sigma2_a);
    visit("sigma2_m", s.sigma2_m);
    visit("sigma2_mu", s.sigma2_mu);
    visit("sigma2_eta", s.sigma2_eta);
    visit("lambda0", s.lambda0);
    visit("lambda1", s.lambda1);
    visit("tau0", s.tau0);
    visit("tau1", s.tau1);
    vec("c2", s.c2);
    vec("d2", s.d2);
    vec("beta", s.beta);
    vec("sigma2_beta", s.sigma2_beta);
    for (int i = 0; i < l.num_athletes(); ++i) {
        auto& a = s.athletes[i];
        const std::string tag = "[" + std::to_string(i + 1) + "]";
        visit("sigma2" + tag, a.sigma2);
        visit("lambda2" + tag, a.lambda2);
        visit("tau2" + tag, a.tau2);
        visit("omega_mu" + tag, a.omega_mu);
        vec("beta_athlete" + tag, a.beta);
        vec("eta" + tag, a.knots);
        vec("omega_eta" + tag, a.omega_eta);
        for (int t = 0; t < l.seasons[i]; ++t) vec("beta_season" + tag + "[" + std::to_string(t + 1) + "]", a.season_beta[t]);
        if (l.latents) {
            vec("omega" + tag, a.omega);
            vec("phi" + tag, a.phi);
            vec("kappa" + tag, a.kappa);
        }
    }
}

}  // namespace detail

/// ParamState with every vector sized for the layout and zero/one filled.
inline ParamState empty_state(const StateLayout& l) {
    const int g = l.num_coeffs();
    ParamState s;
    s.delta = Eigen::VectorXd::Zero(l.degree + 1);
    s.zeta = Eigen::VectorXd::Zero(l.num_confounders);
    s.c2 = Eigen::VectorXd::Ones(g);
    s.d2 = Eigen::VectorXd::Ones(g);
    s.beta = Eigen::VectorXd::Zero(g);
    s.sigma2_beta = Eigen::VectorXd::Ones(g);
    s.athletes.resize(l.num_athletes());
    for (int i = 0; i < l.num_athletes(); ++i) {
        auto& a = s.athletes[i];
        a.beta = Eigen::VectorXd::Zero(g);
        a.season_beta.assign(l.seasons[i], Eigen::VectorXd::Zero(g));
        a.knots = Eigen::VectorXd::Zero(l.seasons[i] + 1);
        a.omega_eta = Eigen::VectorXd::Ones(l.seasons[i]);
        if (l.latents) {
            a.omega = Eigen::VectorXd::Ones(l.rows[i]);
            a.phi = Eigen::VectorXd::Ones(l.rows[i]);
            a.kappa = Eigen::VectorXd::Zero(l.rows[i]);
        }
    }
    return s;
}

inline std::vector<std::string> parameter_names(const StateLayout& l) {
    ParamState s = empty_state(l);
    std::vector<std::string> names;
    detail::walk_state(s, l, [&](const std::string& n, double&) { names.push_back(n); });
    return names;
}

inline int parameter_count(const StateLayout& l) {
    ParamState s = empty_state(l);
    int n = 0;
    detail::walk_state(s, l, [&](const std::string&, double&) { ++n; });
    return n;
}

inline Eigen::VectorXd flatten(const ParamState& state, const StateLayout& l) {
    std::vector<double> out;
    detail::walk_state(state, l, [&](const std::string&, const double& v) { out.push_back(v); });
    return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline ParamState unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat, const StateLayout& l) {
    ParamState s = empty_state(l);
    Eigen::Index k = 0;
    detail::walk_state(s, l, [&](const std::string&, double& v) {
        if (k >= flat.size()) throw std::invalid_argument("unflatten: vector too short for layout");
        v = flat(k++);
    });
    if (k != flat.size()) throw std::invalid_argument("unflatten: vector length does not match layout");
    return s;
}

/// Throws InvariantError naming the first violated state invariant.
inline void check_invariants(const ParamState& s, const PriorConfig& prior) {
    auto fail = [](const std::string& what) { throw InvariantError("state invariant violated: " + what); };
    auto positive = [&](double v, const std::string& what) {
        if (!(v > 0.0) || !std::isfinite(v)) fail(what + " must be positive and finite");
    };
    auto finite = [&](const Eigen::VectorXd& v, const std::string& what) {
        if (!v.allFinite()) fail(what + " must be finite");
    };
    finite(s.delta, "delta");
    finite(s.zeta, "zeta");
    finite(s.beta, "beta");
    if (!std::isfinite(s.alpha)) fail("alpha must be finite");
    for (double v : {s.nu1, s.nu2, s.nu_mu, s.nu_eta, s.sigma2_a, s.sigma2_m, s.sigma2_mu, s.sigma2_eta, s.lambda0,
                     s.lambda1, s.tau0, s.tau1})
        positive(v, "global scale");
    for (const auto* v : {&s.c2, &s.d2, &s.sigma2_beta})
        for (Eigen::Index j = 0; j < v->size(); ++j) positive((*v)(j), "coefficient scale");
    if (!bernstein::satisfies_shape(RbpCoefficientSet(prior.max_order, s.beta), prior.direction))
        fail("population coefficients outside the shape cone");
    for (const auto& a : s.athletes) {
        positive(a.sigma2, "sigma2_i");
        positive(a.lambda2, "lambda2_i");
        positive(a.tau2, "tau2_i");
        positive(a.omega_mu, "omega_mu");
        finite(a.beta, "athlete coefficients");
        finite(a.knots, "knots");
        for (const auto& sb : a.season_beta) finite(sb, "season coefficients");
        for (Eigen::Index j = 0; j < a.omega_eta.size(); ++j) positive(a.omega_eta(j), "omega_eta");
        for (Eigen::Index j = 0; j < a.omega.size(); ++j) positive(a.omega(j), "omega");
        for (Eigen::Index j = 0; j < a.phi.size(); ++j) positive(a.phi(j), "phi");
        for (Eigen::Index j = 0; j < a.kappa.size(); ++j)
            if (!(a.kappa(j) >= 0.0) || !std::isfinite(a.kappa(j))) fail("kappa must be nonnegative");
    }
}

/// Skewness parameter of the skew-normal whose third standardised moment is `skewness`
/// (clamped to the attainable range).
inline double skew_normal_alpha_from_skewness(double skewness) {
    if (!std::isfinite(skewness) || skewness == 0.0) return 0.0;
    const double pi = 3.14159265358979323846;
    auto gamma1 = [&](double d) {
        const double m = d * std::sqrt(2.0 / pi);
        return 0.5 * (4.0 - pi) * m * m * m / std::pow(1.0 - m * m, 1.5);
    };
    const double cap = 0.95;
    const double target = std::min(std::abs(skewness), gamma1(cap));
    double lo = 0.0, hi = cap;
    for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (gamma1(mid) < target ? lo : hi) = mid;
    }
    const double d = 0.5 * (lo + hi);
    return std::copysign(d / std::sqrt(1.0 - d * d), skewness);
}

/// Starting point: least-squares fixed effects, zero coefficient levels, unit latent scales.
inline ParamState init_state(const DesignCache& cache, const PriorConfig& prior, Rng& rng) {
    StateLayout layout = make_layout(cache, true);
    ParamState s = empty_state(layout);
    const int nd = cache.degree + 1;
    const int np = cache.num_confounders;
    const int n = cache.total_rows();

    Eigen::MatrixXd x(n, nd + np);
    Eigen::VectorXd y(n);
    int row = 0;
    for (const auto& d : cache.athletes) {
        x.block(row, 0, d.rows(), nd) = d.poly;
        if (np > 0) x.block(row, nd, d.rows(), np) = d.confounders;
        y.segment(row, d.rows()) = d.y;
        row += d.rows();
    }
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(nd + np);
    if (n > 0) coef = x.colPivHouseholderQr().solve(y);
    if (!coef.allFinite()) coef.setZero();
    s.delta = coef.head(nd);
    s.zeta = coef.tail(np);

    double resid_var = 1.0;
    if (n > 1) {
        const Eigen::VectorXd r = y - x * coef;
        resid_var = std::max(r.squaredNorm() / (n - 1), 1e-6);
    }
    const double sd = std::sqrt(resid_var);
    for (int j = 0; j < nd; ++j) s.delta(j) += 1e-3 * sd * rand::std_normal(rng);

    s.sigma2_beta.setConstant(prior.sigma2_beta.scale / (prior.sigma2_beta.shape - 1.0 > 0 ? prior.sigma2_beta.shape - 1.0 : 1.0));
    s.c2.setConstant(prior.c2.shape / prior.c2.rate);
    s.d2.setConstant(prior.d2.shape / prior.d2.rate);
    s.sigma2_a = 2.0;
    s.sigma2_m = resid_var;
    s.sigma2_mu = resid_var;
    s.sigma2_eta = resid_var;
    // Within-season residuals give the starting skewness.
    std::vector<double> within;
    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteDesign& d = cache.athletes[i];
        AthleteState& a = s.athletes[i];
        Eigen::VectorXd r = d.y - d.poly * s.delta;
        if (np > 0) r -= d.confounders * s.zeta;
        a.knots.setConstant(r.mean());
        a.sigma2 = resid_var;
        a.kappa.setConstant(1e-3 * sd);
        for (const auto& rows : d.season_rows) {
            if (rows.size() < 2) continue;
            double m = 0.0;
            for (int k : rows) m += r(k);
            m /= static_cast<double>(rows.size());
            for (int k : rows) within.push_back(r(k) - m);
        }
    }
    if (within.size() > 2) {
        double m2 = 0.0, m3 = 0.0;
        for (double e : within) {
            m2 += e * e;
            m3 += e * e * e;
        }
        m2 /= static_cast<double>(within.size());
        m3 /= static_cast<double>(within.size());
        if (m2 > 0.0) s.alpha = skew_normal_alpha_from_skewness(m3 / std::pow(m2, 1.5));
    }
    return s;
}

/// Rejection draw of (beta, sigma2_beta) from the cone-truncated joint prior.
inline void draw_population_coefficients(ParamState& s, const PriorConfig& prior, Rng& rng) {
    const int g = prior.num_coeffs();
    for (long attempt = 0; attempt < 1000000; ++attempt) {
        for (int j = 0; j < g; ++j) {
            s.sigma2_beta(j) = rand::inverse_gamma(prior.sigma2_beta.shape, prior.sigma2_beta.scale, rng);
            s.beta(j) = rand::normal(0.0, s.sigma2_beta(j), rng);
        }
        if (bernstein::satisfies_shape(RbpCoefficientSet(prior.max_order, s.beta), prior.direction)) return;
    }
    throw NumericalError("prior draw of population coefficients: rejection sampler did not terminate");
}

/// One joint draw of every parameter and latent from the prior. Requires a
/// proper prior on the fixed effects (fixed_effect_precision > 0).
inline ParamState draw_from_prior(const DesignCache& cache, const PriorConfig& prior, Rng& rng) {
    if (!(prior.fixed_effect_precision > 0.0))
        throw std::invalid_argument("draw_from_prior: fixed effects need a proper prior");
    ParamState s = empty_state(make_layout(cache, true));
    const int g = prior.num_coeffs();
    const double fe_var = 1.0 / prior.fixed_effect_precision;
    for (Eigen::Index j = 0; j < s.delta.size(); ++j) s.delta(j) = rand::normal(0.0, fe_var, rng);
    for (Eigen::Index j = 0; j < s.zeta.size(); ++j) s.zeta(j) = rand::normal(0.0, fe_var, rng);
    s.alpha = rand::normal(0.0, prior.alpha_variance, rng);
    s.nu1 = rand::gamma(prior.nu.shape, prior.nu.rate, rng);
    s.nu2 = rand::gamma(prior.nu.shape, prior.nu.rate, rng);
    s.nu_mu = rand::gamma(prior.nu.shape, prior.nu.rate, rng);
    s.nu_eta = rand::gamma(prior.nu.shape, prior.nu.rate, rng);
    do {
        s.sigma2_a = rand::inverse_gamma(prior.sigma2_a.shape, prior.sigma2_a.scale, rng);
    } while (!(s.sigma2_a <= kMaxErrorShape));  // same truncation as the sampler
    s.sigma2_m = rand::inverse_gamma(prior.sigma2_m.shape, prior.sigma2_m.scale, rng);
    s.sigma2_mu = rand::inverse_gamma(prior.sigma2_mu.shape, prior.sigma2_mu.scale, rng);
    s.sigma2_eta = rand::inverse_gamma(prior.sigma2_eta.shape, prior.sigma2_eta.scale, rng);
    s.lambda0 = rand::gamma(prior.lambda0.shape, prior.lambda0.rate, rng);
    s.lambda1 = rand::inverse_gamma(prior.lambda1.shape, prior.lambda1.scale, rng);
    s.tau0 = rand::gamma(prior.tau0.shape, prior.tau0.rate, rng);
    s.tau1 = rand::inverse_gamma(prior.tau1.shape, prior.tau1.scale, rng);
    for (int j = 0; j < g; ++j) {
        s.c2(j) = rand::gamma(prior.c2.shape, prior.c2.rate, rng);
        s.d2(j) = rand::gamma(prior.d2.shape, prior.d2.rate, rng);
    }
    draw_population_coefficients(s, prior, rng);

    for (int i = 0; i < cache.num_athletes(); ++i) {
        const AthleteDesign& d = cache.athletes[i];
        AthleteState& a = s.athletes[i];
        a.sigma2 = rand::inverse_gamma(s.sigma2_a, s.sigma2_a / s.sigma2_m, rng);
        a.lambda2 = rand::gamma(s.lambda0, s.lambda0 / s.lambda1, rng);
        a.tau2 = rand::gamma(s.tau0, s.tau0 / s.tau1, rng);
        for (int j = 0; j < g; ++j) a.beta(j) = rand::normal(s.beta(j), a.tau2 * s.d2(j), rng);
        for (auto& sb : a.season_beta)
            for (int j = 0; j < g; ++j) sb(j) = rand::normal(a.beta(j), a.lambda2 * s.c2(j), rng);
        a.omega_mu = rand::inverse_gamma(0.5 * s.nu_mu, 0.5 * s.nu_mu, rng);
        a.knots(0) = rand::normal(0.0, a.omega_mu * s.sigma2_mu, rng);
        for (int t = 0; t < d.seasons(); ++t) {
            a.omega_eta(t) = rand::inverse_gamma(0.5 * s.nu_eta, 0.5 * s.nu_eta, rng);
            a.knots(t + 1) = a.knots(t) + rand::normal(0.0, a.omega_eta(t) * s.sigma2_eta, rng);
        }
        for (int k = 0; k < d.rows(); ++k) {
            a.omega(k) = rand::inverse_gamma(0.5 * s.nu1, 0.5 * s.nu1, rng);
            a.phi(k) = rand::inverse_gamma(0.5 * s.nu2, 0.5 * s.nu2, rng);
            a.kappa(k) = std::abs(rand::normal(0.0, a.phi(k) * a.sigma2, rng));
        }
    }
    return s;
}

/// Replace every y in the design by a draw from the sampling model given the state (latents required).
inline void simulate_responses(DesignCache& cache, const ParamState& s, Rng& rng) {
    if (!s.has_latents()) throw std::invalid_argument("simulate_responses: state carries no latents");
    const double q = skew_weight(s.alpha);
    for (int i = 0; i < cache.num_athletes(); ++i) {
        AthleteDesign& d = cache.athletes[i];
        const AthleteState& a = s.athletes[i];
        Eigen::VectorXd mean = d.poly * s.delta + d.interp * a.knots + q * a.kappa;
        if (d.confounders.cols() > 0) mean += d.confounders * s.zeta;
        for (int k = 0; k < d.rows(); ++k) {
            mean(k) += d.basis.row(k).dot(a.season_beta[d.season[k]]);
            d.y(k) = mean(k) + rand::normal(0.0, a.sigma2 * a.omega(k), rng);
        }
    }
}

/// Thinned post-burn-in draws of every chain, stored as one row per draw.
struct PosteriorDraws {
    StateLayout layout;
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXd> chains;  // draws x parameters
    long total_iterations = 0;
    long burn_in = 0;
    long thin = 1;
    std::vector<std::map<std::string, double>> acceptance;  // per chain, per MH-updated parameter

    int num_chains() const { return static_cast<int>(chains.size()); }
    long draws_per_chain() const { return chains.empty() ? 0 : chains.front().rows(); }
    bool empty() const { return draws_per_chain() == 0; }

    int column(const std::string& name) const {
        for (std::size_t j = 0; j < names.size(); ++j)
            if (names[j] == name) return static_cast<int>(j);
        throw std::out_of_range("no parameter named " + name);
    }

    /// Per-chain trace of one scalar.
    std::vector<Eigen::VectorXd> trace(const std::string& name) const {
        const int j = column(name);
        std::vector<Eigen::VectorXd> out;
        for (const auto& c : chains) out.push_back(c.col(j));
        return out;
    }

    ParamState state(int chain, long draw) const { return unflatten(chains.at(chain).row(draw).transpose(), layout); }

    /// Every draw of every chain in chain-major order.
    template <typename F>
    void for_each_state(F&& f) const {
        for (int c = 0; c < num_chains(); ++c)
            for (long t = 0; t < chains[c].rows(); ++t) f(state(c, t));
    }
};

class ChainError : public std::runtime_error {
public:
    ChainError(const std::string& what, std::string dump) : std::runtime_error(what), dump_(std::move(dump)) {}
    const std::string& state_dump() const { return dump_; }

private:
    std::string dump_;
};

inline std::string describe_globals(const ParamState& s) {
    std::ostringstream os;
    os.precision(10);
    os << "delta=" << s.delta.transpose() << "\nzeta=" << s.zeta.transpose() << "\nbeta=" << s.beta.transpose()
       << "\nalpha=" << s.alpha << " nu1=" << s.nu1 << " nu2=" << s.nu2 << " nu_mu=" << s.nu_mu
       << " nu_eta=" << s.nu_eta << "\nsigma2_a=" << s.sigma2_a << " sigma2_m=" << s.sigma2_m
       << " sigma2_mu=" << s.sigma2_mu << " sigma2_eta=" << s.sigma2_eta << "\nlambda0=" << s.lambda0
       << " lambda1=" << s.lambda1 << " tau0=" << s.tau0 << " tau1=" << s.tau1 << "\nc2=" << s.c2.transpose()
       << "\nd2=" << s.d2.transpose() << "\n";
    return os.str();
}

inline Rng chain_rng(std::uint64_t seed, int chain) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(chain), 0x5eedu};
    return Rng(seq);
}

/// Called after every iteration with (chain, iteration, state); used by tests.
using IterationHook = std::function<void(int, long, const ParamState&)>;

/// Run one chain from `start`; returns its draw matrix.
inline Eigen::MatrixXd run_single_chain(const DesignCache& cache, const PriorConfig& prior, const ChainConfig& config,
                                        const StateLayout& layout, ParamState state, int chain, Rng& rng,
                                        std::map<std::string, double>* acceptance = nullptr,
                                        const IterationHook& hook = {}) {
    SamplerTuning tuning(config.adaptation);
    tuning.cone_sweeps = config.cone_sweeps;
    if (config.burn_in == 0) tuning.freeze();
    Eigen::MatrixXd draws(config.recorded_per_chain(), parameter_count(layout));
    long recorded = 0;
    for (long t = 1; t <= config.total_iterations; ++t) {
        try {
            sweep(state, cache, prior, tuning, rng);
            check_invariants(state, prior);
        } catch (const std::exception& e) {
            throw ChainError("chain " + std::to_string(chain + 1) + " failed at iteration " + std::to_string(t) +
                                 ": " + e.what(),
                             describe_globals(state));
        }
        if (t == config.burn_in) tuning.freeze();
        if (hook) hook(chain, t, state);
        if (t > config.burn_in && (t - config.burn_in) % config.thin == 0 && recorded < draws.rows())
            draws.row(recorded++) = flatten(state, layout).transpose();
    }
    if (acceptance) {
        (*acceptance)["sigma2_a"] = tuning.sigma2_a.acceptance_rate();
        (*acceptance)["lambda0"] = tuning.lambda0.acceptance_rate();
        (*acceptance)["tau0"] = tuning.tau0.acceptance_rate();
        (*acceptance)["nu1"] = tuning.nu1.acceptance_rate();
        (*acceptance)["nu2"] = tuning.nu2.acceptance_rate();
        (*acceptance)["nu_mu"] = tuning.nu_mu.acceptance_rate();
        (*acceptance)["nu_eta"] = tuning.nu_eta.acceptance_rate();
        (*acceptance)["alpha"] = tuning.alpha.acceptance_rate();
    }
    return draws;
}

/// Fit the model: independent chains from distinct seeds, each started at init_state.
inline PosteriorDraws run_chain(const Dataset& data, const PriorConfig& prior, const ChainConfig& config,
                                const IterationHook& hook = {}) {
    validate(data);
    validate(prior);
    validate(config);
    const DesignCache cache = build_design(data, prior);
    PosteriorDraws out;
    out.layout = make_layout(cache, config.record_latents);
    out.names = parameter_names(out.layout);
    out.total_iterations = config.total_iterations;
    out.burn_in = config.burn_in;
    out.thin = config.thin;
    out.chains.resize(config.num_chains);
    out.acceptance.resize(config.num_chains);

    std::vector<std::exception_ptr> errors(config.num_chains);
    auto work = [&](int c) {
        try {
            Rng rng = chain_rng(config.seed, c);
            ParamState start = init_state(cache, prior, rng);
            out.chains[c] = run_single_chain(cache, prior, config, out.layout, std::move(start), c, rng,
                                             &out.acceptance[c], hook);
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    if (config.parallel && config.num_chains > 1 && !hook) {
        std::vector<std::thread> threads;
        for (int c = 0; c < config.num_chains; ++c) threads.emplace_back(work, c);
        for (auto& t : threads) t.join();
    } else {
        for (int c = 0; c < config.num_chains; ++c) work(c);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace perftraj
