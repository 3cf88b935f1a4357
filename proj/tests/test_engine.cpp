#include "fixtures.hpp"
#include "perftraj/chain.hpp"
#include "perftraj/design.hpp"
#include "perftraj/sampler.hpp"

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include <set>

using namespace perftraj;

namespace {

struct Fixture {
    Dataset data;
    PriorConfig prior;
    DesignCache cache;
    ParamState state;
};

// One athlete with hand-set hyperparameters; every conditioning value is fixed.
Fixture athlete_fixture(int seasons, int per_season, int max_order, int degree) {
    Fixture f;
    f.data = fixture::grid_dataset(1, seasons, per_season);
    f.prior.degree = degree;
    f.prior.max_order = max_order;
    f.prior.mean_age = f.data.mean_age();
    f.cache = build_design(f.data, f.prior);
    f.state = empty_state(make_layout(f.cache, true));
    ParamState& s = f.state;
    const int g = f.prior.num_coeffs();
    s.delta.setZero();
    s.delta(0) = 59.5;
    s.alpha = 0.8;
    s.sigma2_mu = 2.0;
    s.sigma2_eta = 0.6;
    for (int j = 0; j < g; ++j) {
        s.c2(j) = 0.5 + 0.3 * j;
        s.d2(j) = 1.2 - 0.1 * j;
        s.beta(j) = -0.4 - 0.1 * j;
    }
    AthleteState& a = s.athletes[0];
    a.sigma2 = 0.7;
    a.lambda2 = 0.5;
    a.tau2 = 1.5;
    a.omega_mu = 1.3;
    for (Eigen::Index t = 0; t < a.omega_eta.size(); ++t) a.omega_eta(t) = 0.8 + 0.2 * t;
    for (Eigen::Index k = 0; k < a.omega.size(); ++k) {
        a.omega(k) = 0.6 + 0.1 * (k % 4);
        a.phi(k) = 1.0;
        a.kappa(k) = 0.2 * (k % 3);
    }
    return f;
}

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Gaussian from_precision(const Eigen::MatrixXd& q, const Eigen::VectorXd& b) {
    const Eigen::MatrixXd cov = q.inverse();
    return {cov * b, cov};
}

void expect_moments(const std::vector<Eigen::VectorXd>& draws, const Gaussian& g, const char* what) {
    const int n = static_cast<int>(draws.size());
    const int dim = static_cast<int>(g.mean.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& x : draws) mean += x;
    mean /= n;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
    for (const auto& x : draws) var += (x - mean).array().square().matrix();
    var /= n - 1;
    for (int j = 0; j < dim; ++j) {
        const double se = std::sqrt(g.cov(j, j) / n);
        EXPECT_NEAR(mean(j), g.mean(j), 5.0 * se) << what << " mean " << j;
        EXPECT_NEAR(var(j), g.cov(j, j), 0.04 * g.cov(j, j)) << what << " variance " << j;
    }
}

}  // namespace

TEST(BuildDesign, Examples) {
    PriorConfig prior;
    prior.degree = 1;
    prior.max_order = 3;
    Dataset data;
    Athlete a;
    a.id = "x";
    a.num_seasons = 2;
    a.performances = {fixture::perf(1, 20.0, 1, 0.0), fixture::perf(2, 20.25, 1, 0.25),
                      fixture::perf(3, 20.5, 1, 0.5), fixture::perf(4, 21.5, 2, 0.5)};
    data.athletes.push_back(a);
    const DesignCache c = build_design(data, prior);
    const AthleteDesign& d = c.athletes[0];
    EXPECT_EQ(d.interp.row(0), Eigen::RowVector3d(1, 0, 0));
    EXPECT_EQ(d.basis.row(0).norm(), 0.0);
    EXPECT_EQ(d.interp.row(2), Eigen::RowVector3d(0.5, 0.5, 0));
    EXPECT_EQ(d.interp.row(3), Eigen::RowVector3d(0, 0.5, 0.5));
    EXPECT_NEAR(d.basis(1, 0), 0.375, 1e-15);
    EXPECT_NEAR(d.basis(1, 1), 0.421875, 1e-15);
    EXPECT_NEAR(d.basis(1, 2), 0.140625, 1e-15);

    const Eigen::MatrixXd cs = d.seasonal_design();
    ASSERT_EQ(cs.cols(), 6);
    EXPECT_EQ(cs.row(3).head(3).norm(), 0.0);
    EXPECT_EQ(cs.row(1).tail(3).norm(), 0.0);
    Eigen::Matrix3d phi;
    phi << 1, 0, 0, -1, 1, 0, 0, -1, 1;
    EXPECT_EQ(d.walk, phi);
}

TEST(BuildDesign, RowInvariants) {
    auto data = fixture::grid_dataset(3, 3, 5, 2);
    PriorConfig prior;
    prior.max_order = 5;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    for (int i = 0; i < 3; ++i) {
        const auto& d = c.athletes[i];
        for (int k = 0; k < d.rows(); ++k) {
            EXPECT_NEAR(d.interp.row(k).sum(), 1.0, 1e-15);
            EXPECT_LE((d.interp.row(k).array() != 0.0).count(), 2);
            const double z = data.athletes[i].performances[k].season_fraction;
            for (int j = 0; j < c.num_coeffs; ++j) {
                const auto [n, v] = bernstein::order_and_index(j);
                EXPECT_DOUBLE_EQ(d.basis(k, j), bernstein::eval_basis(n, v, z));
            }
            EXPECT_DOUBLE_EQ(d.poly(k, 1), data.athletes[i].performances[k].age - prior.mean_age);
        }
    }
}

TEST(BuildDesign, RejectsBadFraction) {
    auto data = fixture::grid_dataset(1, 1, 2);
    data.athletes[0].performances[1].season_fraction = 1.0;
    EXPECT_THROW(build_design(data, PriorConfig{}), DataError);
}

TEST(InitState, ValidAndReproducible) {
    auto data = fixture::grid_dataset(4, 3, 4, 1);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    Rng r1(5), r2(5);
    const ParamState a = init_state(c, prior, r1);
    const ParamState b = init_state(c, prior, r2);
    EXPECT_NO_THROW(check_invariants(a, prior));
    EXPECT_TRUE(bernstein::satisfies_shape(RbpCoefficientSet(prior.max_order, a.beta), prior.direction));
    for (const auto& at : a.athletes) EXPECT_GT(at.sigma2, 0.0);
    const StateLayout l = make_layout(c, true);
    EXPECT_EQ(flatten(a, l), flatten(b, l));
}

TEST(SkewnessInit, InvertsSkewNormalSkewness) {
    EXPECT_EQ(skew_normal_alpha_from_skewness(0.0), 0.0);
    const double alpha = 1.7;
    const double d = alpha / std::sqrt(1 + alpha * alpha);
    const double m = d * std::sqrt(2 / M_PI);
    const double g1 = 0.5 * (4 - M_PI) * m * m * m / std::pow(1 - m * m, 1.5);
    EXPECT_NEAR(skew_normal_alpha_from_skewness(g1), alpha, 1e-8);
    EXPECT_NEAR(skew_normal_alpha_from_skewness(-g1), -alpha, 1e-8);
}

TEST(AthleteBlock, MatchesJointGaussianOracle) {
    Fixture f = athlete_fixture(2, 3, 3, 1);
    const AthleteDesign& d = f.cache.athletes[0];
    const ParamState& s = f.state;
    const AthleteState& a = s.athletes[0];
    const int g = f.cache.num_coeffs, k = d.knots(), seasons = d.seasons();
    const int dim = g + k + seasons * g;

    // Joint precision over (beta_i, F, beta_i1, ..., beta_iS), assembled from the model directly.
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    const Eigen::VectorXd level = (a.tau2 * s.d2).cwiseInverse();
    q.topLeftCorner(g, g).diagonal() += level;
    b.head(g) += level.cwiseProduct(s.beta);
    Eigen::VectorXd w(k);
    w(0) = 1.0 / (a.omega_mu * s.sigma2_mu);
    for (int t = 1; t < k; ++t) w(t) = 1.0 / (a.omega_eta(t - 1) * s.sigma2_eta);
    q.block(g, g, k, k) += d.walk.transpose() * w.asDiagonal() * d.walk;
    const Eigen::MatrixXd p = (a.lambda2 * s.c2).cwiseInverse().asDiagonal();
    for (int t = 0; t < seasons; ++t) {
        const int o = g + k + t * g;
        q.block(o, o, g, g) += p;
        q.topLeftCorner(g, g) += p;
        q.block(o, 0, g, g) -= p;
        q.block(0, o, g, g) -= p;
    }
    const double qw = skew_weight(s.alpha);
    for (int r = 0; r < d.rows(); ++r) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
        x.segment(g, k) = d.interp.row(r).transpose();
        x.segment(g + k + d.season[r] * g, g) = d.basis.row(r).transpose();
        const double prec = 1.0 / (a.sigma2 * a.omega(r));
        const double resid = d.y(r) - d.poly.row(r).dot(s.delta) - qw * a.kappa(r);
        q += prec * x * x.transpose();
        b += prec * resid * x;
    }
    const Gaussian oracle = from_precision(q, b);

    Rng rng(17);
    std::vector<Eigen::VectorXd> draws;
    ParamState st = f.state;
    for (int it = 0; it < 100'000; ++it) {
        update_athlete_block(st, f.cache, 0, rng);
        Eigen::VectorXd x(dim);
        x.head(g) = st.athletes[0].beta;
        x.segment(g, k) = st.athletes[0].knots;
        for (int t = 0; t < seasons; ++t) x.segment(g + k + t * g, g) = st.athletes[0].season_beta[t];
        draws.push_back(x);
    }
    expect_moments(draws, oracle, "athlete block");
}

TEST(AthleteBlock, SingleObservationClosedForm) {
    // N = 2, one season, one row at z = 0.5: y - delta = 0.5 F1 + 0.5 F2 + 0.5 b_s + e.
    Fixture f = athlete_fixture(1, 1, 2, 0);
    ParamState& s = f.state;
    AthleteState& a = s.athletes[0];
    a.kappa.setZero();
    const double r = f.cache.athletes[0].y(0) - s.delta(0);
    // Prior covariance of (F1, F2, b_s) and the observation vector x.
    const double vf1 = a.omega_mu * s.sigma2_mu;
    const double vinc = a.omega_eta(0) * s.sigma2_eta;
    const double vbi = a.tau2 * s.d2(0), vbs = a.lambda2 * s.c2(0);
    Eigen::Matrix3d prior_cov;
    prior_cov << vf1, vf1, 0, vf1, vf1 + vinc, 0, 0, 0, vbi + vbs;
    const Eigen::Vector3d prior_mean(0, 0, s.beta(0));
    const Eigen::Vector3d x(0.5, 0.5, 0.5);
    const double noise = a.sigma2 * a.omega(0);
    const double pred_var = x.dot(prior_cov * x) + noise;
    const Eigen::Vector3d gain = prior_cov * x / pred_var;
    const Eigen::Vector3d post_mean = prior_mean + gain * (r - x.dot(prior_mean));
    const Eigen::Matrix3d post_cov = prior_cov - gain * x.transpose() * prior_cov;

    Rng rng(18);
    std::vector<Eigen::VectorXd> draws;
    for (int it = 0; it < 100'000; ++it) {
        update_athlete_block(s, f.cache, 0, rng);
        draws.push_back(Eigen::Vector3d(a.knots(0), a.knots(1), a.season_beta[0](0)));
    }
    expect_moments(draws, {post_mean, post_cov}, "closed form");
}

TEST(AthleteBlock, ShrinksToPopulationUnderTightPrior) {
    Fixture f = athlete_fixture(2, 3, 3, 1);
    f.state.athletes[0].tau2 = 1e-10;
    Rng rng(19);
    update_athlete_block(f.state, f.cache, 0, rng);
    EXPECT_LT((f.state.athletes[0].beta - f.state.beta).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Kappa, ConditionalExamples) {
    const auto z = kappa_conditional(0.0, 3.0, 1.0, 1.0, 1.0);
    EXPECT_EQ(z.mean, 0.0);
    EXPECT_NEAR(z.variance, 1.0 / (1.0 + 0.9), 1e-15);
    const auto sym = kappa_conditional(2.0, 0.0, 1.0, 1.7, 0.5);
    EXPECT_EQ(sym.mean, 0.0);
    EXPECT_NEAR(sym.variance, 1.7 * 0.5, 1e-15);
    const auto big = kappa_conditional(50.0, 3.0, 1.0, 1.0, 1.0);
    const double q = 3.0 / std::sqrt(10.0);
    EXPECT_NEAR(big.mean, q * 50.0 / (1.0 + q * q), 1e-12);
}

TEST(Kappa, DrawsMatchTruncatedNormalMean) {
    Fixture f = athlete_fixture(1, 4, 2, 0);
    Rng rng(20);
    const Eigen::VectorXd resid = structural_residuals(f.state, f.cache.athletes[0], 0);
    const AthleteState& a = f.state.athletes[0];
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(a.kappa.size());
    const int n = 100'000;
    for (int it = 0; it < n; ++it) {
        update_kappa(f.state, f.cache, rng);
        ASSERT_TRUE((a.kappa.array() >= 0.0).all());
        sum += a.kappa;
    }
    const boost::math::normal_distribution<double> std_normal;
    for (Eigen::Index k = 0; k < a.kappa.size(); ++k) {
        const auto c = kappa_conditional(resid(k), f.state.alpha, a.omega(k), a.phi(k), a.sigma2);
        const double sd = std::sqrt(c.variance);
        const double h = c.mean / sd;
        const double oracle = c.mean + sd * boost::math::pdf(std_normal, h) / boost::math::cdf(std_normal, h);
        EXPECT_NEAR(sum(k) / n, oracle, 0.01 * oracle);
    }
}

TEST(PopulationBlock, MatchesMarginalisedOracle) {
    // Rows at season starts: the RBP design vanishes, so (delta, F) is a plain
    // linear-Gaussian system and beta is its truncated prior.
    Fixture f;
    Athlete ath;
    ath.id = "solo";
    ath.num_seasons = 2;
    ath.performances = {fixture::perf(1.0, 20, 1, 0.0), fixture::perf(1.6, 20, 1, 0.0), fixture::perf(2.4, 21, 2, 0.0),
                        fixture::perf(2.0, 21, 2, 0.0)};
    f.data.athletes.push_back(ath);
    f.prior.degree = 0;
    f.prior.max_order = 2;
    f.prior.fixed_effect_precision = 0.5;
    f.cache = build_design(f.data, f.prior);
    f.state = empty_state(make_layout(f.cache, true));
    ParamState& s = f.state;
    s.beta(0) = -0.1;
    s.sigma2_beta(0) = 2.0;
    s.alpha = 1.0;
    s.sigma2_mu = 3.0;
    s.sigma2_eta = 0.5;
    AthleteState& a = s.athletes[0];
    a.sigma2 = 0.4;
    a.omega << 1.0, 0.5, 2.0, 1.0;
    a.kappa << 0.1, 0.0, 0.3, 0.2;
    a.omega_mu = 0.9;
    a.omega_eta << 1.4, 0.7;
    a.beta(0) = -0.3;
    a.season_beta[0](0) = 0.2;
    a.season_beta[1](0) = -0.5;

    const AthleteDesign& d = f.cache.athletes[0];
    const double qw = skew_weight(s.alpha);
    const Eigen::VectorXd r = d.y - qw * a.kappa;
    Eigen::Vector3d w(1.0 / (a.omega_mu * s.sigma2_mu), 1.0 / (a.omega_eta(0) * s.sigma2_eta),
                      1.0 / (a.omega_eta(1) * s.sigma2_eta));
    const Eigen::MatrixXd knot_prec = d.walk.transpose() * w.asDiagonal() * d.walk;
    const Eigen::VectorXd noise = a.sigma2 * a.omega;

    // delta alone: y ~ N(delta 1, noise + Z K^-1 Z^T).
    const Eigen::MatrixXd sigma = Eigen::MatrixXd(noise.asDiagonal()) + d.interp * knot_prec.inverse() * d.interp.transpose();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
    const Eigen::VectorXd si1 = sigma.ldlt().solve(ones);
    const double delta_prec = f.prior.fixed_effect_precision + ones.dot(si1);
    const double delta_mean = si1.dot(r) / delta_prec;

    // (delta, F) jointly.
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 4);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(4);
    q(0, 0) = f.prior.fixed_effect_precision;
    q.bottomRightCorner(3, 3) = knot_prec;
    for (int k = 0; k < 4; ++k) {
        Eigen::Vector4d x;
        x << 1.0, d.interp.row(k).transpose();
        q += x * x.transpose() / noise(k);
        b += x * r(k) / noise(k);
    }
    const Gaussian joint = from_precision(q, b);
    EXPECT_NEAR(joint.mean(0), delta_mean, 1e-10);
    EXPECT_NEAR(joint.cov(0, 0), 1.0 / delta_prec, 1e-10);

    Rng rng(21);
    std::vector<Eigen::VectorXd> draws;
    double beta_sum = 0.0;
    const int n = 100'000;
    for (int it = 0; it < n; ++it) {
        const double diff_season = a.season_beta[1](0) - a.beta(0);
        const double diff_level = a.beta(0) - s.beta(0);
        update_population_block(s, f.cache, f.prior, rng);
        ASSERT_LE(s.beta(0), 0.0);
        ASSERT_NEAR(a.season_beta[1](0) - a.beta(0), diff_season, 1e-12);
        ASSERT_NEAR(a.beta(0) - s.beta(0), diff_level, 1e-12);
        draws.push_back(Eigen::Vector4d(s.delta(0), a.knots(0), a.knots(1), a.knots(2)));
        beta_sum += s.beta(0);
    }
    expect_moments(draws, joint, "population block");
    EXPECT_NEAR(beta_sum / n, -std::sqrt(2.0 * 2.0 / M_PI), 0.01);
}

TEST(PopulationBlock, InterweaveShiftPreservesDifferences) {
    auto data = fixture::grid_dataset(3, 2, 4, 1);
    PriorConfig prior;
    prior.max_order = 4;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    Rng rng(22);
    ParamState s = init_state(c, prior, rng);
    SamplerTuning tuning;
    for (int it = 0; it < 5; ++it) sweep(s, c, prior, tuning, rng);
    const ParamState before = s;
    update_population_block(s, c, prior, rng);
    for (int i = 0; i < 3; ++i) {
        const auto& a0 = before.athletes[i];
        const auto& a1 = s.athletes[i];
        EXPECT_LT(((a1.beta - s.beta) - (a0.beta - before.beta)).cwiseAbs().maxCoeff(), 1e-12);
        for (int t = 0; t < 2; ++t)
            EXPECT_LT(((a1.season_beta[t] - a1.beta) - (a0.season_beta[t] - a0.beta)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(ScaleFamily, ConditionalExamples) {
    PriorConfig prior;
    const auto m = sigma2_m_conditional(prior, 1, 2.0, 1.0 / 4.0);
    EXPECT_DOUBLE_EQ(m.shape, 2.001);
    EXPECT_DOUBLE_EQ(m.scale, 0.501);
    const auto e = error_scale_conditional(2.0, 0.5, 7, 0.0);
    EXPECT_DOUBLE_EQ(e.shape, 9.0);
    EXPECT_DOUBLE_EQ(e.scale, 2.0 / 0.5);
    const auto sb = sigma2_beta_conditional(prior, 0.0);
    EXPECT_DOUBLE_EQ(sb.shape, 5.5);
    EXPECT_DOUBLE_EQ(sb.scale, 5.0);
}

TEST(ScaleFamily, RandomWalkScalesSingleSite) {
    Fixture f = athlete_fixture(3, 2, 2, 0);
    f.prior.sigma2_mu = {3.0, 2.0};
    f.prior.sigma2_eta = {4.0, 1.0};
    AthleteState& a = f.state.athletes[0];
    a.knots << 0.5, 1.5, 1.0, 2.0;
    const double start = 0.25 / a.omega_mu;
    double incr = 0.0;
    for (int t = 0; t < 3; ++t) incr += std::pow(a.knots(t + 1) - a.knots(t), 2) / a.omega_eta(t);
    const double mu_mean = (2.0 + 0.5 * start) / (3.0 + 0.5 - 1.0);
    const double eta_mean = (1.0 + 0.5 * incr) / (4.0 + 1.5 - 1.0);
    Rng rng(23);
    double smu = 0.0, seta = 0.0;
    const int n = 200'000;
    for (int it = 0; it < n; ++it) {
        update_random_walk_scales(f.state, f.prior, rng);
        smu += f.state.sigma2_mu;
        seta += f.state.sigma2_eta;
    }
    EXPECT_NEAR(smu / n, mu_mean, 0.015 * mu_mean);
    EXPECT_NEAR(seta / n, eta_mean, 0.015 * eta_mean);
}

TEST(ScaleFamily, SigmaBetaSingleSite) {
    PriorConfig prior;
    prior.max_order = 2;
    ParamState s;
    s.beta = Eigen::VectorXd::Constant(1, -1.2);
    s.sigma2_beta = Eigen::VectorXd::Ones(1);
    Rng rng(24);
    double sum = 0.0;
    const int n = 200'000;
    for (int it = 0; it < n; ++it) {
        update_sigma2_beta(s, prior, rng);
        sum += s.sigma2_beta(0);
    }
    const double oracle = (5.0 + 0.5 * 1.44) / (5.5 - 1.0);
    EXPECT_NEAR(sum / n, oracle, 0.01 * oracle);
}

TEST(ShrinkageFamily, ConditionalExamples) {
    // dev^2 = 1, c^2 = 1, lambda0 = lambda1 = 1, S_i = 1, G = 1.
    const auto l = athlete_scale_conditional(1.0, 1.0, 1, 1, 1.0);
    EXPECT_DOUBLE_EQ(l.lambda, 0.5);
    EXPECT_DOUBLE_EQ(l.chi, 1.0);
    EXPECT_DOUBLE_EQ(l.psi, 2.0);
    // Equal levels: chi = 0, the gamma boundary.
    const auto eq = athlete_scale_conditional(3.0, 1.0, 1, 1, 0.0);
    EXPECT_EQ(eq.chi, 0.0);
    Rng rng(25);
    double sum = 0.0;
    for (int it = 0; it < 100'000; ++it) sum += draw(eq, rng);
    EXPECT_NEAR(sum / 100'000, eq.lambda / (eq.psi / 2.0), 0.01 * eq.lambda / (eq.psi / 2.0));

    const auto c = coefficient_scale_conditional(GammaPrior{5.0, 5.0}, 4, 2.0);
    EXPECT_DOUBLE_EQ(c.lambda, 3.0);
    EXPECT_DOUBLE_EQ(c.chi, 2.0);
    EXPECT_DOUBLE_EQ(c.psi, 10.0);
}

TEST(ShrinkageFamily, GroupMovePreservesProducts) {
    auto data = fixture::grid_dataset(4, 2, 3);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    Rng rng(26);
    ParamState s = init_state(c, prior, rng);
    for (auto& a : s.athletes) {
        a.lambda2 = rand::gamma(2.0, 1.0, rng);
        a.tau2 = rand::gamma(2.0, 1.0, rng);
    }
    for (int j = 0; j < s.c2.size(); ++j) {
        s.c2(j) = rand::gamma(2.0, 1.0, rng);
        s.d2(j) = rand::gamma(2.0, 1.0, rng);
    }
    const ParamState before = s;
    rescale_seasonal_scales(s, 3.7);
    rescale_level_scales(s, 0.21);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < s.c2.size(); ++j) {
            EXPECT_NEAR(s.athletes[i].lambda2 * s.c2(j), before.athletes[i].lambda2 * before.c2(j),
                        1e-14 * before.athletes[i].lambda2 * before.c2(j));
            EXPECT_NEAR(s.athletes[i].tau2 * s.d2(j), before.athletes[i].tau2 * before.d2(j),
                        1e-14 * before.athletes[i].tau2 * before.d2(j));
        }
}

TEST(TailFamily, LatentScaleExamples) {
    const auto omega = latent_scale_conditional(9.0, 0.0);
    EXPECT_DOUBLE_EQ(omega.shape, 5.0);
    EXPECT_DOUBLE_EQ(omega.scale, 4.5);
    const auto phi = latent_scale_conditional(7.0, 1.0);
    EXPECT_DOUBLE_EQ(phi.shape, 4.0);
    EXPECT_DOUBLE_EQ(phi.scale, 4.0);
}

TEST(TailFamily, AlphaGradientMatchesFiniteDifference) {
    Fixture f = athlete_fixture(2, 4, 3, 1);
    Rng rng(27);
    for (auto& v : f.state.athletes[0].kappa) v = std::abs(rand::std_normal(rng));
    const double h = 1e-5;
    const double fd = (alpha_log_density(1.0 + h, f.state, f.cache, f.prior) -
                       alpha_log_density(1.0 - h, f.state, f.cache, f.prior)) /
                      (2.0 * h);
    const double analytic = alpha_log_density_gradient(1.0, f.state, f.cache, f.prior);
    EXPECT_NEAR(fd, analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
}

TEST(TailFamily, AlphaDensityIsQuadraticInSkewWeight) {
    Fixture f = athlete_fixture(2, 4, 3, 1);
    auto without_prior = [&](double alpha) {
        return alpha_log_density(alpha, f.state, f.cache, f.prior) + 0.5 * alpha * alpha / f.prior.alpha_variance;
    };
    // Three points pin a quadratic in q; a fourth must lie on it.
    const double as[] = {-1.0, 0.3, 2.0, 5.0};
    double q[4], v[4];
    for (int k = 0; k < 4; ++k) {
        q[k] = skew_weight(as[k]);
        v[k] = without_prior(as[k]);
    }
    auto lagrange = [&](double x) {
        double total = 0.0;
        for (int i = 0; i < 3; ++i) {
            double term = v[i];
            for (int j = 0; j < 3; ++j)
                if (j != i) term *= (x - q[j]) / (q[i] - q[j]);
            total += term;
        }
        return total;
    };
    EXPECT_NEAR(lagrange(q[3]), v[3], 1e-8 * std::max(1.0, std::abs(v[3])));
}

TEST(TailFamily, NuTargetIsStudentTLogLikelihood) {
    const std::vector<double> sq{0.1, 2.0, 0.7};
    const double nu = 6.5;
    double full = 0.0;
    for (double x2 : sq)
        full += std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI) -
                0.5 * (nu + 1) * std::log1p(x2 / nu);
    // The kernel drops terms free of nu; compare differences in nu.
    const double nu2 = 11.0;
    double full2 = 0.0;
    for (double x2 : sq)
        full2 += std::lgamma(0.5 * (nu2 + 1)) - std::lgamma(0.5 * nu2) - 0.5 * std::log(nu2 * M_PI) -
                 0.5 * (nu2 + 1) * std::log1p(x2 / nu2);
    EXPECT_NEAR(detail::log_t_kernel(nu2, sq) - detail::log_t_kernel(nu, sq), full2 - full, 1e-10);
}

TEST(Layout, FlattenRoundTripAndUniqueNames) {
    auto data = fixture::grid_dataset(3, 2, 3, 2);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    Rng rng(28);
    ParamState s = init_state(c, prior, rng);
    SamplerTuning tuning;
    sweep(s, c, prior, tuning, rng);
    for (bool latents : {false, true}) {
        const StateLayout l = make_layout(c, latents);
        const auto names = parameter_names(l);
        EXPECT_EQ(static_cast<int>(names.size()), parameter_count(l));
        EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
        const Eigen::VectorXd flat = flatten(s, l);
        EXPECT_EQ(flatten(unflatten(flat, l), l), flat);
    }
}

TEST(RunChain, ThinningCountsAndDeterminism) {
    auto data = fixture::grid_dataset(2, 2, 3);
    PriorConfig prior;
    prior.max_order = 3;
    prior.degree = 1;
    prior.mean_age = data.mean_age();
    ChainConfig cfg;
    cfg.total_iterations = 20'100;
    cfg.burn_in = 100;
    cfg.thin = 20;
    cfg.num_chains = 1;
    cfg.seed = 42;
    const PosteriorDraws a = run_chain(data, prior, cfg);
    EXPECT_EQ(a.draws_per_chain(), 1000);

    cfg.total_iterations = 600;
    cfg.num_chains = 2;
    const PosteriorDraws p1 = run_chain(data, prior, cfg);
    const PosteriorDraws p2 = run_chain(data, prior, cfg);
    cfg.parallel = false;
    const PosteriorDraws p3 = run_chain(data, prior, cfg);
    for (int c = 0; c < 2; ++c) {
        EXPECT_EQ(p1.chains[c], p2.chains[c]);
        EXPECT_EQ(p1.chains[c], p3.chains[c]);
    }
    EXPECT_NE(p1.chains[0], p1.chains[1]);
}

TEST(RunChain, ZeroPostBurnInIsEmpty) {
    auto data = fixture::grid_dataset(2, 2, 3);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    ChainConfig cfg;
    cfg.total_iterations = 50;
    cfg.burn_in = 50;
    cfg.num_chains = 1;
    PosteriorDraws d;
    EXPECT_NO_THROW(d = run_chain(data, prior, cfg));
    EXPECT_TRUE(d.empty());
}

TEST(RunChain, ConfigValidation) {
    ChainConfig cfg;
    cfg.burn_in = cfg.total_iterations + 1;
    EXPECT_THROW(validate(cfg), std::invalid_argument);
    cfg = ChainConfig{};
    cfg.thin = 0;
    EXPECT_THROW(validate(cfg), std::invalid_argument);
    EXPECT_EQ(ChainConfig{}.recorded_per_chain(), 1000);
}

TEST(RunChain, InvariantsHoldEveryIteration) {
    auto data = fixture::grid_dataset(3, 3, 4, 1);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    ChainConfig cfg;
    cfg.total_iterations = 300;
    cfg.burn_in = 100;
    cfg.thin = 1;
    cfg.num_chains = 1;
    long seen = 0;
    run_chain(data, prior, cfg, [&](int, long, const ParamState& s) {
        ++seen;
        EXPECT_NO_THROW(check_invariants(s, prior));
        for (const auto& a : s.athletes)
            for (const auto& sb : a.season_beta) {
                EXPECT_EQ(bernstein::eval_rbp(prior.max_order, sb, 0.0), 0.0);
                EXPECT_EQ(bernstein::eval_rbp(prior.max_order, sb, 1.0), 0.0);
            }
    });
    EXPECT_EQ(seen, 300);
}

TEST(RunChain, BrokenStateAbortsWithDump) {
    auto data = fixture::grid_dataset(2, 2, 3);
    PriorConfig prior;
    prior.mean_age = data.mean_age();
    const DesignCache c = build_design(data, prior);
    Rng rng(29);
    ParamState s = init_state(c, prior, rng);
    s.beta.setConstant(1.0);  // outside the cone for the default direction
    ChainConfig cfg;
    cfg.total_iterations = 5;
    cfg.burn_in = 0;
    cfg.num_chains = 1;
    try {
        run_single_chain(c, prior, cfg, make_layout(c, false), s, 0, rng);
        FAIL() << "expected ChainError";
    } catch (const ChainError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
        EXPECT_NE(e.state_dump().find("beta="), std::string::npos);
    }
}
