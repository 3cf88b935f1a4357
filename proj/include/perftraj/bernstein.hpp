#pragma once
// Restricted Bernstein polynomial (RBP) basis.
//
// An RBP of order n drops the two endpoint basis functions so that it vanishes
// at z = 0 and z = 1. Seasonal trajectories are sums of RBPs of orders 2..N,
// giving G = N(N-1)/2 coefficients per curve. The flat ordering
//   (2,1), (3,1), (3,2), (4,1), ... , (N,N-1)
// is used everywhere coefficients are stored, including the columns of the
// seasonal design matrices.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace perftraj {

enum class Improvement { Negative, Positive };

namespace bernstein {

inline int num_coeffs(int max_order) { return max_order * (max_order - 1) / 2; }

inline void check_index(int n, int v) {
    if (n < 2 || v < 1 || v > n - 1)
        throw std::invalid_argument("RBP index (" + std::to_string(n) + "," + std::to_string(v) +
                                    ") outside 2 <= n, 1 <= v <= n-1");
}

/// Position of b_{n,v} in the flat coefficient vector.
inline int flat_index(int n, int v) {
    check_index(n, v);
    return (n - 2) * (n - 1) / 2 + (v - 1);
}

/// Inverse of flat_index.
inline std::pair<int, int> order_and_index(int flat) {
    if (flat < 0) throw std::invalid_argument("negative flat RBP index");
    int n = 2;
    while (flat >= n - 1) {
        flat -= n - 1;
        ++n;
    }
    return {n, flat + 1};
}

inline double log_factorial(int k) { return std::lgamma(static_cast<double>(k) + 1.0); }

inline double log_binomial(int n, int k) {
    return log_factorial(n) - log_factorial(k) - log_factorial(n - k);
}

inline double binomial(int n, int k) { return std::round(std::exp(log_binomial(n, k))); }

/// b_{n,v}(z) = C(n,v) z^v (1-z)^(n-v).
inline double eval_basis(int n, int v, double z) {
    check_index(n, v);
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("basis location outside [0,1]");
    if (z == 0.0 || z == 1.0) return 0.0;
    return binomial(n, v) * std::pow(z, v) * std::pow(1.0 - z, n - v);
}

/// All G basis values at z in flat order.
inline Eigen::VectorXd basis_row(int max_order, double z) {
    Eigen::VectorXd row(num_coeffs(max_order));
    for (int n = 2; n <= max_order; ++n)
        for (int v = 1; v < n; ++v) row(flat_index(n, v)) = eval_basis(n, v, z);
    return row;
}

}  // namespace bernstein

/// Coefficients of a sum of RBPs of orders 2..N at one level of the hierarchy.
class RbpCoefficientSet {
public:
    RbpCoefficientSet() = default;

    explicit RbpCoefficientSet(int max_order)
        : max_order_(max_order),
          values_(Eigen::VectorXd::Zero(max_order >= 2 ? bernstein::num_coeffs(max_order) : 0)) {
        if (max_order < 2) throw std::invalid_argument("RBP max order must be >= 2");
    }

    RbpCoefficientSet(int max_order, Eigen::VectorXd values) : max_order_(max_order), values_(std::move(values)) {
        if (max_order < 2) throw std::invalid_argument("RBP max order must be >= 2");
        if (values_.size() != bernstein::num_coeffs(max_order))
            throw std::invalid_argument("RBP coefficient vector has " + std::to_string(values_.size()) +
                                        " entries, expected " +
                                        std::to_string(bernstein::num_coeffs(max_order)));
        if (!values_.allFinite()) throw std::invalid_argument("RBP coefficients must be finite");
    }

    int max_order() const { return max_order_; }
    int size() const { return static_cast<int>(values_.size()); }

    double operator()(int n, int v) const {
        if (n > max_order_) throw std::invalid_argument("RBP order exceeds max order");
        return values_(bernstein::flat_index(n, v));
    }
    double& operator()(int n, int v) {
        if (n > max_order_) throw std::invalid_argument("RBP order exceeds max order");
        return values_(bernstein::flat_index(n, v));
    }

    const Eigen::VectorXd& values() const { return values_; }

    /// The n-th order block (beta_{n,1}, ..., beta_{n,n-1}).
    Eigen::VectorXd order_block(int n) const {
        if (n < 2 || n > max_order_) throw std::invalid_argument("RBP order out of range");
        return values_.segment(bernstein::flat_index(n, 1), n - 1);
    }

private:
    int max_order_ = 0;
    Eigen::VectorXd values_;
};

namespace bernstein {

/// Sum over the flat coefficient vector; zero at both endpoints.
inline double eval_rbp(int max_order, const Eigen::Ref<const Eigen::VectorXd>& coeffs, double z) {
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("RBP location outside [0,1]");
    if (z == 0.0 || z == 1.0) return 0.0;
    double total = 0.0;
    for (int n = 2; n <= max_order; ++n) {
        double inner = 0.0;
        for (int v = 1; v < n; ++v) inner += coeffs(flat_index(n, v)) * eval_basis(n, v, z);
        total += inner;
    }
    return total;
}

inline double eval_rbp(const RbpCoefficientSet& coeffs, double z) {
    return eval_rbp(coeffs.max_order(), coeffs.values(), z);
}

/// Integral of b_{n,v} over [0,1]; does not depend on v.
inline double basis_integral(int n) {
    if (n < 2) throw std::invalid_argument("basis_integral requires n >= 2");
    return 1.0 / (n + 1.0);
}

/// Integral over [0,1] of b_{n1,v1} b_{n2,v2}.
inline double cross_integral(int n1, int v1, int n2, int v2) {
    check_index(n1, v1);
    check_index(n2, v2);
    const double log_value = log_binomial(n1, v1) + log_binomial(n2, v2) + log_factorial(v1 + v2) +
                             log_factorial(n1 + n2 - v1 - v2) - log_factorial(n1 + n2 + 1);
    return std::exp(log_value);
}

/// Gram matrix of the flat basis, entry (j,k) = cross_integral of bases j and k.
inline Eigen::MatrixXd gram_matrix(int max_order) {
    const int g = num_coeffs(max_order);
    Eigen::MatrixXd gram(g, g);
    for (int j = 0; j < g; ++j) {
        auto [n1, v1] = order_and_index(j);
        for (int k = 0; k < g; ++k) {
            auto [n2, v2] = order_and_index(k);
            gram(j, k) = cross_integral(n1, v1, n2, v2);
        }
    }
    return gram;
}

inline double integral_of_sum(const RbpCoefficientSet& coeffs) {
    double total = 0.0;
    for (int n = 2; n <= coeffs.max_order(); ++n) total += coeffs.order_block(n).sum() * basis_integral(n);
    return total;
}

/// Bilinear form sum a_j b_k B_jk; the squared-curve integral when a == b.
inline double integral_of_square(const RbpCoefficientSet& a, const RbpCoefficientSet& b) {
    if (a.max_order() != b.max_order())
        throw std::invalid_argument("integral_of_square: coefficient sets have different max orders");
    return a.values().dot(gram_matrix(a.max_order()) * b.values());
}

/// Second-difference matrix D_n, (n-1)x(n-1) tridiagonal (1, -2, 1).
inline Eigen::MatrixXd convexity_matrix(int n) {
    if (n < 2) throw std::invalid_argument("convexity_matrix requires n >= 2");
    const int k = n - 1;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(k, k);
    for (int j = 0; j < k; ++j) {
        d(j, j) = -2.0;
        if (j > 0) d(j, j - 1) = 1.0;
        if (j + 1 < k) d(j, j + 1) = 1.0;
    }
    return d;
}

/// Block-diagonal G x G matrix stacking D_2, ..., D_N over the flat ordering.
inline Eigen::MatrixXd stacked_convexity_matrix(int max_order) {
    const int g = num_coeffs(max_order);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(g, g);
    for (int n = 2; n <= max_order; ++n) {
        const int start = flat_index(n, 1);
        d.block(start, start, n - 1, n - 1) = convexity_matrix(n);
    }
    return d;
}

/// +1 when the population curve must be convex (D beta >= 0), -1 when concave.
inline int cone_sign(Improvement direction) { return direction == Improvement::Negative ? 1 : -1; }

/// Convex (negative improvement) or concave (positive improvement) at every order.
inline bool satisfies_shape(const RbpCoefficientSet& coeffs, Improvement direction) {
    const double sign = cone_sign(direction);
    for (int n = 2; n <= coeffs.max_order(); ++n) {
        const Eigen::VectorXd prod = convexity_matrix(n) * coeffs.order_block(n);
        for (Eigen::Index j = 0; j < prod.size(); ++j)
            if (sign * prod(j) < 0.0) return false;
    }
    return true;
}

}  // namespace bernstein
}  // namespace perftraj
