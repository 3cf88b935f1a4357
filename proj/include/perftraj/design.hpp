#pragma once
// Per-athlete design matrices for the linear mixed model representation
//
//   y_i = A_i delta + X_i zeta + Z_i F_i + C_i beta_i + q kappa_i + eps*_i.
//
// C_i is block sparse (each row touches only its season's G columns), so it is
// stored as the dense n_i x G matrix of basis values together with each row's
// season; rows are grouped by season for the per-season sub-blocks.

#include "bernstein.hpp"
#include "model.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace perftraj {

struct AthleteDesign {
    Eigen::VectorXd y;
    Eigen::MatrixXd poly;        // A_i, n x (d+1)
    Eigen::MatrixXd confounders; // X_i, n x p
    Eigen::MatrixXd interp;      // Z_i, n x (S_i+1)
    Eigen::MatrixXd basis;       // n x G basis values at each row's z
    std::vector<int> season;     // 0-based season of each row
    std::vector<std::vector<int>> season_rows;  // rows per season, size S_i
    Eigen::MatrixXd walk;        // Phi_i, (S_i+1) x (S_i+1) differencing matrix

    int rows() const { return static_cast<int>(y.size()); }
    int seasons() const { return static_cast<int>(season_rows.size()); }
    int knots() const { return seasons() + 1; }

    /// Full n_i x (S_i G) seasonal design C_i.
    Eigen::MatrixXd seasonal_design() const {
        const int g = static_cast<int>(basis.cols());
        Eigen::MatrixXd c = Eigen::MatrixXd::Zero(rows(), seasons() * g);
        for (int k = 0; k < rows(); ++k) c.block(k, season[k] * g, 1, g) = basis.row(k);
        return c;
    }
};

struct DesignCache {
    int degree = 0;
    int max_order = 2;
    int num_coeffs = 1;
    int num_confounders = 0;
    double season_length = 1.0;
    std::vector<AthleteDesign> athletes;

    int num_athletes() const { return static_cast<int>(athletes.size()); }
    int total_rows() const {
        int n = 0;
        for (const auto& a : athletes) n += a.rows();
        return n;
    }
    int total_seasons() const {
        int n = 0;
        for (const auto& a : athletes) n += a.seasons();
        return n;
    }
};

/// Unit lower-bidiagonal differencing matrix: (Phi F) = (F_1, F_2 - F_1, ...).
inline Eigen::MatrixXd random_walk_matrix(int knots) {
    Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(knots, knots);
    for (int j = 1; j < knots; ++j) phi(j, j - 1) = -1.0;
    return phi;
}

inline DesignCache build_design(const Dataset& data, const PriorConfig& prior) {
    DesignCache cache;
    cache.degree = prior.degree;
    cache.max_order = prior.max_order;
    cache.num_coeffs = prior.num_coeffs();
    cache.num_confounders = data.num_confounders();
    cache.season_length = data.season_length;
    cache.athletes.reserve(data.athletes.size());
    for (const auto& athlete : data.athletes) {
        const int n = athlete.size();
        const int seasons = athlete.num_seasons;
        AthleteDesign d;
        d.y.resize(n);
        d.poly.resize(n, prior.degree + 1);
        d.confounders.resize(n, cache.num_confounders);
        d.interp = Eigen::MatrixXd::Zero(n, seasons + 1);
        d.basis.resize(n, cache.num_coeffs);
        d.season.resize(n);
        d.season_rows.assign(seasons, {});
        for (int k = 0; k < n; ++k) {
            const Performance& perf = athlete.performances[k];
            const double z = perf.season_fraction;
            if (!(z >= 0.0 && z < 1.0))
                throw DataError("athlete " + athlete.id + ": season fraction " + std::to_string(z) +
                                " outside [0,1)");
            if (perf.season < 1 || perf.season > seasons)
                throw DataError("athlete " + athlete.id + ": season index out of range");
            d.y(k) = perf.value;
            double power = 1.0;
            for (int j = 0; j <= prior.degree; ++j) {
                d.poly(k, j) = power;
                power *= perf.age - prior.mean_age;
            }
            if (cache.num_confounders > 0) d.confounders.row(k) = perf.confounders.transpose();
            const int s = perf.season - 1;
            d.interp(k, s) = 1.0 - z;
            d.interp(k, s + 1) = z;
            d.basis.row(k) = bernstein::basis_row(prior.max_order, z).transpose();
            d.season[k] = s;
            d.season_rows[s].push_back(k);
        }
        d.walk = random_walk_matrix(seasons + 1);
        cache.athletes.push_back(std::move(d));
    }
    return cache;
}

}  // namespace perftraj
