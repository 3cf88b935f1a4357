#pragma once
// Random variate generators used by the Gibbs sampler. Every generator takes
// the engine explicitly; there is no global state.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

using Rng = std::mt19937_64;

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace rand {

inline double uniform(Rng& rng) {
    // (0,1): never returns an exact zero, so logs are safe.
    constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
    return (static_cast<double>(rng() >> 11) + 0.5) * scale;
}

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double normal(double mean, double variance, Rng& rng) { return mean + std::sqrt(variance) * std_normal(rng); }

inline double exponential(double rate, Rng& rng) { return -std::log(uniform(rng)) / rate; }

/// Gamma with density proportional to x^(shape-1) exp(-rate x).
inline double gamma(double shape, double rate, Rng& rng) {
    if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("gamma: shape and rate must be positive");
    return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

/// Inverse gamma with density proportional to x^(-shape-1) exp(-scale / x).
inline double inverse_gamma(double shape, double scale, Rng& rng) {
    if (!(shape > 0.0) || !(scale > 0.0))
        throw std::invalid_argument("inverse_gamma: shape and scale must be positive");
    return 1.0 / gamma(shape, scale, rng);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double norm_quantile(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

namespace detail {

// Standard normal restricted to [a, b] with a >= 4 (far right tail). Exponential
// proposal with optimal rate; uniform proposal when the interval is short.
inline double right_tail_normal(double a, double b, Rng& rng) {
    if (b - a < 1.0 / a) {
        // Short interval: uniform proposal, envelope exp(-a^2/2).
        for (;;) {
            const double z = a + (b - a) * uniform(rng);
            if (std::log(uniform(rng)) <= -0.5 * (z * z - a * a)) return z;
        }
    }
    const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
        const double z = a + exponential(rate, rng);
        if (z > b) continue;
        const double d = z - rate;
        if (std::log(uniform(rng)) <= -0.5 * d * d) return z;
    }
}

inline double standard_truncated_normal(double a, double b, Rng& rng) {
    constexpr double tail = 4.0;
    if (a >= tail) return right_tail_normal(a, b, rng);
    if (b <= -tail) return -right_tail_normal(-b, -a, rng);
    if (a > 0.0) {
        // Both bounds positive: invert the upper tail for accuracy.
        const double pa = norm_cdf(-a);
        const double pb = norm_cdf(-b);
        const double u = pb + (pa - pb) * uniform(rng);
        return std::clamp(-norm_quantile(u), a, b);
    }
    const double pa = norm_cdf(a);
    const double pb = norm_cdf(b);
    const double u = pa + (pb - pa) * uniform(rng);
    return std::clamp(norm_quantile(u), a, b);
}

}  // namespace detail

/// Normal(mean, variance) restricted to [lower, upper]; either bound may be infinite.
inline double truncated_normal(double mean, double variance, double lower, double upper, Rng& rng) {
    if (!(variance > 0.0)) throw std::invalid_argument("truncated_normal: variance must be positive");
    if (!(lower < upper)) {
        if (lower == upper && std::isfinite(lower)) return lower;
        throw std::invalid_argument("truncated_normal: empty interval [" + std::to_string(lower) + ", " +
                                    std::to_string(upper) + "]");
    }
    const double sd = std::sqrt(variance);
    const double a = (lower - mean) / sd;
    const double b = (upper - mean) / sd;
    const double x = mean + sd * detail::standard_truncated_normal(a, b, rng);
    return std::clamp(x, lower, upper);
}

namespace detail {

// Generalized inverse Gaussian with chi = psi = omega, lambda >= 0.
// Hoermann & Leydold (2014) ratio-of-uniforms and rejection schemes.
inline double gig_mode(double lambda, double omega) {
    if (lambda >= 1.0) return (std::sqrt((lambda - 1.0) * (lambda - 1.0) + omega * omega) + (lambda - 1.0)) / omega;
    return omega / (std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega) + (1.0 - lambda));
}

inline double gig_rou_noshift(double lambda, double omega, Rng& rng) {
    const double t = 0.5 * (lambda - 1.0);
    const double s = 0.25 * omega;
    const double xm = gig_mode(lambda, omega);
    const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
    const double ym = ((lambda + 1.0) + std::sqrt((lambda + 1.0) * (lambda + 1.0) + omega * omega)) / omega;
    const double um = std::exp(0.5 * (lambda + 1.0) * std::log(ym) - s * (ym + 1.0 / ym) - nc);
    for (;;) {
        const double u = um * uniform(rng);
        const double v = uniform(rng);
        const double x = u / v;
        if (std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
    }
}

inline double gig_rou_shift(double lambda, double omega, Rng& rng) {
    const double t = 0.5 * (lambda - 1.0);
    const double s = 0.25 * omega;
    const double xm = gig_mode(lambda, omega);
    const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
    const double a = -(2.0 * (lambda + 1.0) / omega + xm);
    const double b = (2.0 * (lambda - 1.0) * xm / omega - 1.0);
    const double c = xm;
    const double p = b - a * a / 3.0;
    const double q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c;
    const double fi = std::acos(-q / (2.0 * std::sqrt(-(p * p * p) / 27.0)));
    const double fak = 2.0 * std::sqrt(-p / 3.0);
    const double y1 = fak * std::cos(fi / 3.0) - a / 3.0;
    const double y2 = fak * std::cos(fi / 3.0 + 4.0 / 3.0 * M_PI) - a / 3.0;
    const double uplus = (y1 - xm) * std::exp(t * std::log(y1) - s * (y1 + 1.0 / y1) - nc);
    const double uminus = (y2 - xm) * std::exp(t * std::log(y2) - s * (y2 + 1.0 / y2) - nc);
    for (;;) {
        const double u = uminus + uniform(rng) * (uplus - uminus);
        const double v = uniform(rng);
        const double x = u / v + xm;
        if (x <= 0.0) continue;
        if (std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
    }
}

// Non-T-concave region: 0 <= lambda < 1, small omega.
inline double gig_small_omega(double lambda, double omega, Rng& rng) {
    const double xm = gig_mode(lambda, omega);
    const double x0 = omega / (1.0 - lambda);
    const double k0 = std::exp((lambda - 1.0) * std::log(xm) - 0.5 * omega * (xm + 1.0 / xm));
    double area[3];
    area[0] = k0 * x0;
    double k1 = 0.0;
    double k2 = 0.0;
    if (x0 >= 2.0 / omega) {
        area[1] = 0.0;
        k2 = std::pow(x0, lambda - 1.0);
        area[2] = k2 * 2.0 * std::exp(-omega * x0 / 2.0) / omega;
    } else {
        k1 = std::exp(-omega);
        area[1] = (lambda == 0.0) ? k1 * std::log(2.0 / (omega * omega))
                                  : k1 / lambda * (std::pow(2.0 / omega, lambda) - std::pow(x0, lambda));
        k2 = std::pow(2.0 / omega, lambda - 1.0);
        area[2] = k2 * 2.0 * std::exp(-1.0) / omega;
    }
    const double total = area[0] + area[1] + area[2];
    for (;;) {
        double v = total * uniform(rng);
        double x = 0.0;
        double hx = 0.0;
        if (v <= area[0]) {
            x = x0 * v / area[0];
            hx = k0;
        } else if ((v -= area[0]) <= area[1]) {
            if (lambda == 0.0) {
                x = omega * std::exp(std::exp(omega) * v);
                hx = k1 / x;
            } else {
                x = std::pow(std::pow(x0, lambda) + (lambda / k1 * v), 1.0 / lambda);
                hx = k1 * std::pow(x, lambda - 1.0);
            }
        } else {
            v -= area[1];
            const double a = (x0 > 2.0 / omega) ? x0 : 2.0 / omega;
            x = -2.0 / omega * std::log(std::exp(-omega / 2.0 * a) - omega / (2.0 * k2) * v);
            hx = k2 * std::exp(-omega / 2.0 * x);
        }
        const double u = uniform(rng) * hx;
        if (std::log(u) <= (lambda - 1.0) * std::log(x) - omega / 2.0 * (x + 1.0 / x)) return x;
    }
}

inline double gig_standard(double lambda, double omega, Rng& rng) {
    if (lambda > 2.0 || omega > 3.0) return gig_rou_shift(lambda, omega, rng);
    if (lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2) return gig_rou_noshift(lambda, omega, rng);
    return gig_small_omega(lambda, omega, rng);
}

}  // namespace detail

/// GIG(lambda, chi, psi) with density proportional to x^(lambda-1) exp(-(chi/x + psi x)/2).
inline double gig_sample(double lambda, double chi, double psi, Rng& rng) {
    if (!std::isfinite(lambda) || !(chi >= 0.0) || !(psi >= 0.0) || !std::isfinite(chi) || !std::isfinite(psi))
        throw std::invalid_argument("gig_sample: invalid parameters");
    if ((lambda <= 0.0 && !(chi > 0.0)) || (lambda >= 0.0 && !(psi > 0.0)))
        throw std::invalid_argument("gig_sample: parameters outside the GIG domain (lambda=" +
                                    std::to_string(lambda) + ", chi=" + std::to_string(chi) +
                                    ", psi=" + std::to_string(psi) + ")");
    if (chi == 0.0) return gamma(lambda, psi / 2.0, rng);
    if (psi == 0.0) return inverse_gamma(-lambda, chi / 2.0, rng);
    const double omega = std::sqrt(chi * psi);
    const double scale = std::sqrt(chi / psi);
    const double abs_lambda = std::abs(lambda);
    if (omega < 1e-12) {
        // Degenerate scale mix: the boundary family is exact to working precision.
        if (lambda > 0.0) return gamma(lambda, psi / 2.0, rng);
        if (lambda < 0.0) return inverse_gamma(-lambda, chi / 2.0, rng);
    }
    const double y = detail::gig_standard(abs_lambda, omega, rng);
    return lambda < 0.0 ? scale / y : scale * y;
}

/// Log of the unnormalised GIG density.
inline double gig_log_kernel(double x, double lambda, double chi, double psi) {
    return (lambda - 1.0) * std::log(x) - 0.5 * (chi / x + psi * x);
}

/// Cholesky factor of an SPD matrix, retrying with diagonal jitter 1e-10 .. 1e-6
/// (relative to the mean diagonal) when the plain factorisation fails.
inline Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& q) {
    Eigen::LLT<Eigen::MatrixXd> llt(q);
    if (llt.info() == Eigen::Success) return llt;
    const double scale = std::max(q.diagonal().cwiseAbs().mean(), 1e-300);
    for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
        Eigen::MatrixXd qj = q;
        qj.diagonal().array() += jitter * scale;
        llt.compute(qj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw NumericalError("matrix is not positive definite even after jitter");
}

/// Draw from N(Q^{-1} b, Q^{-1}) given the precision Q and linear term b.
inline Eigen::VectorXd mvn_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear, Rng& rng) {
    const auto llt = spd_factor(precision);
    Eigen::VectorXd mean = llt.solve(linear);
    Eigen::VectorXd z(linear.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = std_normal(rng);
    return mean + llt.matrixU().solve(z);
}

/// A block of linear inequalities sign * (matrix * x) >= 0 over the constrained coordinates.
struct ConeConstraint {
    Eigen::MatrixXd matrix;
    int sign = 1;
};

/// Normal with given mean and precision, where the coordinates after the first
/// `free_block_size` must satisfy every cone constraint.
///
/// The constrained block is updated from its Gaussian marginal (the free block
/// is unconstrained, so integrating it out leaves a truncated Gaussian) by
/// systematic-scan univariate Gibbs, then the free block is drawn exactly from
/// its conditional. When the stacked constraint matrix is square and
/// invertible the scan runs in the transformed coordinates u = sign * D x,
/// where the feasible set is the nonnegative orthant. Without constraints the
/// draw is an exact joint normal draw. The kernel leaves the target invariant;
/// `current` must be feasible.
inline Eigen::VectorXd truncated_mvn_cone(const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision,
                                          int free_block_size, const std::vector<ConeConstraint>& constraints,
                                          Rng& rng, const Eigen::VectorXd& current, int sweeps = 10) {
    const int dim = static_cast<int>(mean.size());
    if (precision.rows() != dim || precision.cols() != dim || current.size() != dim)
        throw std::invalid_argument("truncated_mvn_cone: dimension mismatch");
    if (free_block_size < 0 || free_block_size > dim)
        throw std::invalid_argument("truncated_mvn_cone: bad free block size");
    const int nc = dim - free_block_size;

    int rows = 0;
    for (const auto& c : constraints) {
        if (c.matrix.cols() != nc) throw std::invalid_argument("truncated_mvn_cone: constraint width mismatch");
        rows += static_cast<int>(c.matrix.rows());
    }
    if (rows == 0 || nc == 0) return mvn_from_precision(precision, precision * mean, rng);

    // Stack everything into sign-adjusted rows: d * x_c >= 0.
    Eigen::MatrixXd d(rows, nc);
    {
        int r = 0;
        for (const auto& c : constraints) {
            d.middleRows(r, c.matrix.rows()) = static_cast<double>(c.sign) * c.matrix;
            r += static_cast<int>(c.matrix.rows());
        }
    }
    Eigen::VectorXd xc = current.tail(nc);
    const Eigen::VectorXd slack = d * xc;
    const double tol = 1e-9 * std::max(1.0, xc.cwiseAbs().maxCoeff());
    if ((slack.array() < -tol).any())
        throw std::invalid_argument("truncated_mvn_cone: current point violates the constraints");

    // Marginal precision of the constrained block.
    const Eigen::MatrixXd p_cc = precision.bottomRightCorner(nc, nc);
    Eigen::MatrixXd marginal_precision = p_cc;
    Eigen::LLT<Eigen::MatrixXd> free_llt;
    if (free_block_size > 0) {
        free_llt = spd_factor(precision.topLeftCorner(free_block_size, free_block_size));
        const Eigen::MatrixXd p_fc = precision.topRightCorner(free_block_size, nc);
        marginal_precision -= p_fc.transpose() * free_llt.solve(p_fc);
        marginal_precision = 0.5 * (marginal_precision + marginal_precision.transpose());
    }
    const Eigen::VectorXd mean_c = mean.tail(nc);

    Eigen::FullPivLU<Eigen::MatrixXd> lu;
    bool orthant = false;
    if (rows == nc) {
        lu.compute(d);
        orthant = lu.isInvertible();
    }

    if (orthant) {
        // u = d x, x = d^{-1} u; precision in u is d^{-T} P d^{-1}.
        const Eigen::MatrixXd d_inv = lu.inverse();
        Eigen::MatrixXd pu = d_inv.transpose() * marginal_precision * d_inv;
        pu = 0.5 * (pu + pu.transpose());
        const Eigen::VectorXd mu = d * mean_c;
        Eigen::VectorXd u = (d * xc).cwiseMax(0.0);
        for (int sweep = 0; sweep < sweeps; ++sweep) {
            for (int j = 0; j < nc; ++j) {
                const double pjj = pu(j, j);
                const double shift = pu.row(j).dot(u - mu) - pjj * (u(j) - mu(j));
                const double m = mu(j) - shift / pjj;
                u(j) = truncated_normal(m, 1.0 / pjj, 0.0, std::numeric_limits<double>::infinity(), rng);
            }
        }
        xc = d_inv * u;
    } else {
        for (int sweep = 0; sweep < sweeps; ++sweep) {
            for (int j = 0; j < nc; ++j) {
                const double pjj = marginal_precision(j, j);
                const double shift = marginal_precision.row(j).dot(xc - mean_c) - pjj * (xc(j) - mean_c(j));
                const double m = mean_c(j) - shift / pjj;
                double lo = -std::numeric_limits<double>::infinity();
                double hi = std::numeric_limits<double>::infinity();
                for (int r = 0; r < rows; ++r) {
                    const double a = d(r, j);
                    if (a == 0.0) continue;
                    const double rest = d.row(r).dot(xc) - a * xc(j);
                    const double bound = -rest / a;
                    if (a > 0.0)
                        lo = std::max(lo, bound);
                    else
                        hi = std::min(hi, bound);
                }
                if (lo > hi) lo = hi = xc(j);
                xc(j) = truncated_normal(m, 1.0 / pjj, lo, hi, rng);
            }
        }
    }

    Eigen::VectorXd out(dim);
    out.tail(nc) = xc;
    if (free_block_size > 0) {
        const Eigen::MatrixXd p_fc = precision.topRightCorner(free_block_size, nc);
        const Eigen::VectorXd rhs = precision.topLeftCorner(free_block_size, free_block_size) *
                                        mean.head(free_block_size) -
                                    p_fc * (xc - mean_c);
        Eigen::VectorXd z(free_block_size);
        for (int j = 0; j < free_block_size; ++j) z(j) = std_normal(rng);
        out.head(free_block_size) = free_llt.solve(rhs) + free_llt.matrixU().solve(z);
    }
    return out;
}

}  // namespace rand
}  // namespace perftraj
