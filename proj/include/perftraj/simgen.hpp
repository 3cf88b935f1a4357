#pragma once
// Synthetic careers with known truth, and a replicated simulation-study driver.
//
// Each athlete gets S_i ~ Po(4) w.p. p1 or Po(8) otherwise (zero redrawn),
// 3..11 performances per season at sorted uniform times, entry age U(18,22),
// a Gaussian random-walk trend, and within-season curves built from
//   h*(z)          = 4 (z - 1/2)^2 - 1
//   h*_i - h*      = a_i    * bump(z; p_i),    p_i   ~ U(0.5, 0.7), a_i   ~ N(0, s2a)
//   h*_{i,s} - h*_i = b_{i,s} * bump(z; r_{i,s}), r_{i,s} ~ U(0.5, 0.7), b_{i,s} ~ N(0, s2b)
// where bump(z; p) = 1 - (z-p)^2/p^2 for z <= p and 1 - (z-p)^2/(1-p^2) after.

#include "chain.hpp"
#include "model.hpp"
#include "random.hpp"
#include "summaries.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

struct SimDesign {
    int num_athletes = 200;
    double p1 = 0.2;
    double poisson_low = 4.0;   // mean with probability p1
    double poisson_high = 8.0;  // mean with probability 1 - p1
    int min_per_season = 3;
    int max_per_season = 11;
    double entry_age_min = 18.0;
    double entry_age_max = 22.0;
    double sigma2_a = 0.5;  // athlete curve amplitude variance
    double sigma2_b = 0.25; // season curve amplitude variance
    double alpha = 3.0;
    double nu1 = 30.0;
    double nu2 = 7.0;
    double sigma2_error = 0.25;
    double eta_initial_var = 4.0;
    double eta_increment_var = 0.09;
    std::uint64_t seed = 1;
};

inline void validate(const SimDesign& d) {
    if (d.num_athletes < 1) throw std::invalid_argument("sim: need at least one athlete");
    if (!(d.p1 >= 0.0 && d.p1 <= 1.0)) throw std::invalid_argument("sim: p1 must lie in [0,1]");
    if (!(d.poisson_low > 0.0 && d.poisson_high > 0.0)) throw std::invalid_argument("sim: Poisson means must be positive");
    if (d.min_per_season < 1 || d.max_per_season < d.min_per_season)
        throw std::invalid_argument("sim: bad performances-per-season range");
    if (!(d.entry_age_max >= d.entry_age_min)) throw std::invalid_argument("sim: bad entry age range");
    for (double v : {d.sigma2_a, d.sigma2_b, d.eta_initial_var, d.eta_increment_var})
        if (!(v >= 0.0)) throw std::invalid_argument("sim: variances must be nonnegative");
    if (!(d.sigma2_error > 0.0 && d.nu1 > 0.0 && d.nu2 > 0.0))
        throw std::invalid_argument("sim: error parameters must be positive");
}

struct AthleteTruth {
    double entry_age = 0.0;
    double turn = 0.5;       // p_i
    double amplitude = 0.0;  // a_i
    Eigen::VectorXd season_turn;       // r_{i,s}
    Eigen::VectorXd season_amplitude;  // b_{i,s}
    Eigen::VectorXd knots;             // eta_{i,1..S_i+1}
};

struct TruthRecord {
    std::vector<AthleteTruth> athletes;
};

inline double sim_population_curve(double age) { return 40.0 + 0.1 * (age - 26.0) * (age - 26.0); }

inline double sim_population_season_curve(double z) { return 4.0 * (z - 0.5) * (z - 0.5) - 1.0; }

/// Piecewise parabola with turning point p and value 1 there; not forced to 0 at z = 1.
inline double sim_bump(double z, double p) {
    const double d = (z - p) * (z - p);
    return z <= p ? 1.0 - d / (p * p) : 1.0 - d / (1.0 - p * p);
}

inline double truth_athlete_season(const AthleteTruth& t, double z) {
    return sim_population_season_curve(z) + t.amplitude * sim_bump(z, t.turn);
}

inline double truth_season(const AthleteTruth& t, int season, double z) {
    return truth_athlete_season(t, z) + t.season_amplitude(season) * sim_bump(z, t.season_turn(season));
}

struct SimulatedData {
    Dataset data;
    TruthRecord truth;
};

inline SimulatedData generate_dataset(const SimDesign& design, Rng& rng) {
    validate(design);
    SimulatedData out;
    out.data.season_length = 1.0;
    std::poisson_distribution<int> po_low(design.poisson_low), po_high(design.poisson_high);
    std::uniform_int_distribution<int> per_season(design.min_per_season, design.max_per_season);

    for (int i = 0; i < design.num_athletes; ++i) {
        AthleteTruth t;
        int seasons = 0;
        while (seasons < 1) seasons = rand::uniform(rng) < design.p1 ? po_low(rng) : po_high(rng);
        t.entry_age = design.entry_age_min + (design.entry_age_max - design.entry_age_min) * rand::uniform(rng);
        t.turn = 0.5 + 0.2 * rand::uniform(rng);
        t.amplitude = rand::normal(0.0, design.sigma2_a, rng);
        t.season_turn.resize(seasons);
        t.season_amplitude.resize(seasons);
        t.knots.resize(seasons + 1);
        t.knots(0) = rand::normal(0.0, design.eta_initial_var, rng);
        for (int s = 0; s < seasons; ++s) {
            t.knots(s + 1) = t.knots(s) + rand::normal(0.0, design.eta_increment_var, rng);
            t.season_turn(s) = 0.5 + 0.2 * rand::uniform(rng);
            t.season_amplitude(s) = rand::normal(0.0, design.sigma2_b, rng);
        }

        Athlete athlete;
        athlete.id = "sim" + std::to_string(i + 1);
        athlete.num_seasons = seasons;
        athlete.age_at_start = t.entry_age;
        for (int s = 0; s < seasons; ++s) {
            const int count = per_season(rng);
            std::vector<double> zs(count);
            for (double& z : zs) z = rand::uniform(rng);
            std::sort(zs.begin(), zs.end());
            for (double z : zs) {
                Performance p;
                p.season = s + 1;
                p.season_fraction = z;
                p.time = (s + z) * out.data.season_length;
                p.age = t.entry_age + p.time;
                p.confounders = Eigen::VectorXd(0);
                p.value = sim_population_curve(p.age) + t.knots(s) * (1.0 - z) + t.knots(s + 1) * z +
                          truth_season(t, s, z) +
                          sample_error(design.alpha, design.nu1, design.nu2, design.sigma2_error, rng);
                athlete.performances.push_back(std::move(p));
            }
        }
        out.data.athletes.push_back(std::move(athlete));
        out.truth.athletes.push_back(std::move(t));
    }
    validate(out.data);
    return out;
}

/// Point estimates of every curve the study scores, evaluated on fixed grids.
struct FitSummary {
    std::vector<double> population;                            // g on the age grid
    std::vector<double> population_season;                     // h* on the season grid
    std::vector<std::vector<double>> athlete_season;           // h*_i
    std::vector<std::vector<std::vector<double>>> season;      // h*_{i,s}
    std::vector<Eigen::VectorXd> knots;                        // eta-hat
    std::vector<double> tau2;                                  // posterior median per athlete
    std::vector<double> lambda2;
};

struct StudyGrids {
    std::vector<double> age = uniform_grid(18.0, 30.0, 121);
    std::vector<double> season = season_grid();
};

/// Fits one dataset; receives the truth only so that oracle fitters can be written.
using Fitter = std::function<FitSummary(const Dataset&, const TruthRecord&, std::uint64_t seed, const StudyGrids&)>;

/// Returns the ground truth itself; every error metric is then zero.
inline Fitter truth_fitter() {
    return [](const Dataset&, const TruthRecord& truth, std::uint64_t, const StudyGrids& grids) {
        FitSummary f;
        for (double a : grids.age) f.population.push_back(sim_population_curve(a));
        for (double z : grids.season) f.population_season.push_back(sim_population_season_curve(z));
        for (const auto& t : truth.athletes) {
            std::vector<double> h;
            for (double z : grids.season) h.push_back(truth_athlete_season(t, z));
            f.athlete_season.push_back(std::move(h));
            std::vector<std::vector<double>> seasons;
            for (Eigen::Index s = 0; s < t.season_amplitude.size(); ++s) {
                std::vector<double> hs;
                for (double z : grids.season) hs.push_back(truth_season(t, static_cast<int>(s), z));
                seasons.push_back(std::move(hs));
            }
            f.season.push_back(std::move(seasons));
            f.knots.push_back(t.knots);
            f.tau2.push_back(t.amplitude * t.amplitude);
            f.lambda2.push_back(t.season_amplitude.cwiseAbs().mean());
        }
        return f;
    };
}

/// Posterior means of the curves and knots, posterior medians of tau_i^2 and lambda_i^2.
inline FitSummary summarize_fit(const PosteriorDraws& draws, const PriorConfig& prior, const StudyGrids& grids) {
    if (draws.empty()) throw std::invalid_argument("summarize_fit: no draws");
    const StateLayout& l = draws.layout;
    const int m = l.num_athletes();
    const int g = l.num_coeffs();
    const double count = static_cast<double>(draws.num_chains() * draws.draws_per_chain());

    Eigen::VectorXd delta = Eigen::VectorXd::Zero(l.degree + 1);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(g);
    std::vector<Eigen::VectorXd> athlete_beta(m, Eigen::VectorXd::Zero(g));
    std::vector<std::vector<Eigen::VectorXd>> season_beta(m);
    std::vector<Eigen::VectorXd> knots(m);
    std::vector<std::vector<double>> tau2(m), lambda2(m);
    for (int i = 0; i < m; ++i) {
        season_beta[i].assign(l.seasons[i], Eigen::VectorXd::Zero(g));
        knots[i] = Eigen::VectorXd::Zero(l.seasons[i] + 1);
    }
    draws.for_each_state([&](const ParamState& s) {
        delta += s.delta;
        beta += s.beta;
        for (int i = 0; i < m; ++i) {
            const AthleteState& a = s.athletes[i];
            athlete_beta[i] += a.beta;
            for (int t = 0; t < l.seasons[i]; ++t) season_beta[i][t] += a.season_beta[t];
            knots[i] += a.knots;
            tau2[i].push_back(a.tau2);
            lambda2[i].push_back(a.lambda2);
        }
    });

    auto curve = [&](const Eigen::VectorXd& coeffs) {
        std::vector<double> out;
        for (double z : grids.season) out.push_back(bernstein::eval_rbp(prior.max_order, coeffs / count, z));
        return out;
    };
    FitSummary f;
    for (double a : grids.age) f.population.push_back(population_trajectory(delta / count, prior.mean_age, a));
    f.population_season = curve(beta);
    for (int i = 0; i < m; ++i) {
        f.athlete_season.push_back(curve(athlete_beta[i]));
        std::vector<std::vector<double>> seasons;
        for (const auto& sb : season_beta[i]) seasons.push_back(curve(sb));
        f.season.push_back(std::move(seasons));
        f.knots.push_back(knots[i] / count);
        f.tau2.push_back(median(tau2[i]));
        f.lambda2.push_back(median(lambda2[i]));
    }
    return f;
}

/// Fits the full model with the given prior template (mean age taken from each dataset).
inline Fitter model_fitter(PriorConfig prior, ChainConfig chain) {
    return [prior, chain](const Dataset& data, const TruthRecord&, std::uint64_t seed, const StudyGrids& grids) {
        PriorConfig p = prior;
        p.mean_age = data.mean_age();
        ChainConfig c = chain;
        c.seed = seed;
        c.record_latents = false;
        return summarize_fit(run_chain(data, p, c), p, grids);
    };
}

struct StudyRecord {
    int cell = 0;
    int replication = 0;
    SimDesign design;
    bool ok = false;
    std::string error;
    double rmise_population = std::numeric_limits<double>::quiet_NaN();
    double rmise_population_season = std::numeric_limits<double>::quiet_NaN();
    double rmise_athlete_season = std::numeric_limits<double>::quiet_NaN();  // averaged over athletes
    double rmise_season = std::numeric_limits<double>::quiet_NaN();          // averaged over athlete-seasons
    double armse_knots = std::numeric_limits<double>::quiet_NaN();
    double spearman_tau = std::numeric_limits<double>::quiet_NaN();     // tau-hat^2 vs |a_i|
    double spearman_lambda = std::numeric_limits<double>::quiet_NaN();  // lambda-hat^2 vs mean |b_{i,s}|
};

/// Score one fit against its truth.
inline void score_fit(StudyRecord& rec, const FitSummary& f, const TruthRecord& truth, const StudyGrids& grids) {
    std::vector<double> g_true, h_true;
    for (double a : grids.age) g_true.push_back(sim_population_curve(a));
    for (double z : grids.season) h_true.push_back(sim_population_season_curve(z));
    rec.rmise_population = rmise(grids.age, f.population, g_true);
    rec.rmise_population_season = rmise(grids.season, f.population_season, h_true);

    const std::size_t m = truth.athletes.size();
    if (f.athlete_season.size() != m || f.season.size() != m || f.knots.size() != m)
        throw std::invalid_argument("fit summary does not match the truth record");
    double athlete_total = 0.0, season_total = 0.0;
    long season_count = 0;
    std::vector<Eigen::VectorXd> true_knots;
    std::vector<double> abs_a, mean_abs_b;
    for (std::size_t i = 0; i < m; ++i) {
        const AthleteTruth& t = truth.athletes[i];
        std::vector<double> hi;
        for (double z : grids.season) hi.push_back(truth_athlete_season(t, z));
        athlete_total += rmise(grids.season, f.athlete_season[i], hi);
        for (Eigen::Index s = 0; s < t.season_amplitude.size(); ++s) {
            std::vector<double> hs;
            for (double z : grids.season) hs.push_back(truth_season(t, static_cast<int>(s), z));
            season_total += rmise(grids.season, f.season[i].at(s), hs);
            ++season_count;
        }
        true_knots.push_back(t.knots);
        abs_a.push_back(std::abs(t.amplitude));
        mean_abs_b.push_back(t.season_amplitude.cwiseAbs().mean());
    }
    rec.rmise_athlete_season = athlete_total / static_cast<double>(m);
    rec.rmise_season = season_total / static_cast<double>(season_count);
    rec.armse_knots = armse(f.knots, true_knots);
    try {
        rec.spearman_tau = spearman(f.tau2, abs_a);
    } catch (const std::exception&) {
    }
    try {
        rec.spearman_lambda = spearman(f.lambda2, mean_abs_b);
    } catch (const std::exception&) {
    }
}

inline std::uint64_t replication_seed(std::uint64_t master, int cell, int replication) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(replication)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// One record per (cell, replication). Fit failures are recorded and the study continues.
inline std::vector<StudyRecord> run_study(const std::vector<SimDesign>& cells, int replications, const Fitter& fit,
                                          const StudyGrids& grids = {}) {
    if (replications < 0) throw std::invalid_argument("run_study: negative replication count");
    std::vector<StudyRecord> records;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (int r = 0; r < replications; ++r) {
            StudyRecord rec;
            rec.cell = static_cast<int>(c);
            rec.replication = r;
            rec.design = cells[c];
            const std::uint64_t seed = replication_seed(cells[c].seed, static_cast<int>(c), r);
            try {
                Rng rng(seed);
                const SimulatedData sim = generate_dataset(cells[c], rng);
                const FitSummary f = fit(sim.data, sim.truth, seed ^ 0x9e3779b97f4a7c15ull, grids);
                score_fit(rec, f, sim.truth, grids);
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

inline std::vector<StudyRecord> run_study(const std::vector<SimDesign>& cells, int replications,
                                          const ChainConfig& chain, const PriorConfig& prior = {}) {
    return run_study(cells, replications, model_fitter(prior, chain));
}

}  // namespace perftraj
