#pragma once
// Adaptive random-walk Metropolis-Hastings.
//
// Univariate parameters use a Robbins-Monro adapted proposal scale targeting a
// fixed acceptance rate. Multivariate parameters start with componentwise
// adaptive updates and, after a warm-up, switch to adaptive scaling within
// adaptive Metropolis (ASWAM): a joint random walk whose covariance is a tuned
// multiple of the empirical covariance of the chain so far. Adaptation stops
// permanently once freeze() is called.

#include "random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>

namespace perftraj {

struct AdaptationSettings {
    double target_univariate = 0.3;
    double target_multivariate = 0.234;
    double decay = 0.6;          // step size t^{-decay}
    long switch_after = 1000;    // componentwise iterations before ASWAM
    double initial_log_scale = std::log(0.5);
};

class AdaptiveMhState {
public:
    AdaptiveMhState() : AdaptiveMhState(1) {}

    explicit AdaptiveMhState(int dim, AdaptationSettings settings = {})
        : settings_(settings),
          dim_(dim),
          log_scales_(Eigen::VectorXd::Constant(dim, settings.initial_log_scale)),
          joint_log_scale_(std::log(2.38 * 2.38 / dim)),
          mean_(Eigen::VectorXd::Zero(dim)),
          m2_(Eigen::MatrixXd::Zero(dim, dim)) {
        if (dim < 1) throw std::invalid_argument("AdaptiveMhState: dimension must be positive");
    }

    int dim() const { return dim_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }
    bool joint_mode() const { return dim_ > 1 && iterations_ >= settings_.switch_after; }

    long iterations() const { return iterations_; }
    long proposals() const { return proposals_; }
    long accepted() const { return accepted_; }
    long nan_rejections() const { return nan_rejections_; }
    double acceptance_rate() const { return proposals_ == 0 ? 0.0 : double(accepted_) / double(proposals_); }

    double log_scale(int j = 0) const { return log_scales_(j); }
    double joint_log_scale() const { return joint_log_scale_; }
    void set_log_scale(double value, int j = 0) { log_scales_(j) = value; }

    /// Empirical covariance of the visited states (zero before two samples).
    Eigen::MatrixXd empirical_covariance() const {
        if (samples_ < 2) return Eigen::MatrixXd::Zero(dim_, dim_);
        return m2_ / double(samples_ - 1);
    }

    /// Proposal covariance in the joint phase.
    Eigen::MatrixXd proposal_covariance() const {
        Eigen::MatrixXd cov = empirical_covariance();
        cov.diagonal().array() += 1e-10 * std::max(1.0, cov.diagonal().mean());
        return std::exp(joint_log_scale_) * cov;
    }

    template <typename LogTarget>
    friend Eigen::VectorXd adaptive_mh_step(AdaptiveMhState& state, const Eigen::VectorXd& current,
                                            const LogTarget& log_target, Rng& rng);

private:
    double step_size() const { return std::pow(double(iterations_ + 1), -settings_.decay); }

    void record_sample(const Eigen::VectorXd& x) {
        ++samples_;
        const Eigen::VectorXd delta = x - mean_;
        mean_ += delta / double(samples_);
        m2_ += delta * (x - mean_).transpose();
    }

    // Metropolis accept/reject; returns the acceptance probability.
    template <typename LogTarget>
    double accept(Eigen::VectorXd& x, double& log_current, const Eigen::VectorXd& proposal,
                  const LogTarget& log_target, Rng& rng) {
        ++proposals_;
        const double log_proposed = log_target(proposal);
        if (std::isnan(log_proposed)) {
            ++nan_rejections_;
            return 0.0;
        }
        const double log_ratio = log_proposed - log_current;
        const double prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
        if (std::log(rand::uniform(rng)) < log_ratio) {
            x = proposal;
            log_current = log_proposed;
            ++accepted_;
        }
        return prob;
    }

    AdaptationSettings settings_;
    int dim_;
    Eigen::VectorXd log_scales_;
    double joint_log_scale_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd m2_;
    long samples_ = 0;
    long iterations_ = 0;
    long proposals_ = 0;
    long accepted_ = 0;
    long nan_rejections_ = 0;
    bool frozen_ = false;
};

/// One adaptive MH transition. `log_target` maps a vector to its log density
/// (up to a constant); NaN proposals are rejected and counted.
template <typename LogTarget>
Eigen::VectorXd adaptive_mh_step(AdaptiveMhState& state, const Eigen::VectorXd& current,
                                 const LogTarget& log_target, Rng& rng) {
    if (current.size() != state.dim_) throw std::invalid_argument("adaptive_mh_step: dimension mismatch");
    Eigen::VectorXd x = current;
    double log_current = log_target(x);
    if (!std::isfinite(log_current)) throw std::invalid_argument("adaptive_mh_step: log target not finite at current");
    const double gamma = state.step_size();

    if (state.joint_mode()) {
        const Eigen::MatrixXd cov = state.proposal_covariance();
        const Eigen::LLT<Eigen::MatrixXd> llt(cov);
        Eigen::VectorXd z(state.dim_);
        for (int j = 0; j < state.dim_; ++j) z(j) = rand::std_normal(rng);
        const Eigen::VectorXd proposal = x + llt.matrixL() * z;
        const double prob = state.accept(x, log_current, proposal, log_target, rng);
        if (!state.frozen_) state.joint_log_scale_ += gamma * (prob - state.settings_.target_multivariate);
    } else {
        for (int j = 0; j < state.dim_; ++j) {
            Eigen::VectorXd proposal = x;
            proposal(j) += std::exp(state.log_scales_(j)) * rand::std_normal(rng);
            const double prob = state.accept(x, log_current, proposal, log_target, rng);
            if (!state.frozen_) state.log_scales_(j) += gamma * (prob - state.settings_.target_univariate);
        }
    }
    if (!state.frozen_) {
        state.record_sample(x);
        ++state.iterations_;
    }
    return x;
}

/// Scalar convenience wrapper.
template <typename LogTarget>
double adaptive_mh_step(AdaptiveMhState& state, double current, const LogTarget& log_target, Rng& rng) {
    Eigen::VectorXd x(1);
    x(0) = current;
    const auto wrapped = [&](const Eigen::VectorXd& v) { return log_target(v(0)); };
    return adaptive_mh_step(state, x, wrapped, rng)(0);
}

}  // namespace perftraj
