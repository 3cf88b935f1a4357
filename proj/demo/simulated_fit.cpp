// Simulate a small cohort, fit it, and compare the fitted population curves with the truth.

#include "perftraj/perftraj.hpp"

#include <cstdio>

using namespace perftraj;

int main() {
    SimDesign design;
    design.num_athletes = 40;
    Rng rng(2024);
    const SimulatedData sim = generate_dataset(design, rng);
    std::printf("%d athletes, %d performances\n", sim.data.num_athletes(), sim.data.num_performances());

    PriorConfig prior;
    prior.mean_age = sim.data.mean_age();
    ChainConfig chain;
    chain.total_iterations = 3000;
    chain.burn_in = 1500;
    chain.thin = 5;
    const PosteriorDraws draws = run_chain(sim.data, prior, chain);
    const auto states = all_states(draws);

    const auto ages = uniform_grid(19.0, 29.0, 6);
    const Band g = trajectory_band(states, {Trajectory::Population}, ages, prior.mean_age, prior.max_order);
    std::printf("\n%6s %8s %8s %8s %8s\n", "age", "truth", "median", "lower", "upper");
    for (std::size_t k = 0; k < ages.size(); ++k)
        std::printf("%6.1f %8.3f %8.3f %8.3f %8.3f\n", ages[k], sim_population_curve(ages[k]), g.median[k], g.lower[k],
                    g.upper[k]);

    const auto zs = uniform_grid(0.0, 1.0, 6);
    const Band h = trajectory_band(states, {Trajectory::PopulationSeason}, zs, prior.mean_age, prior.max_order);
    std::printf("\n%6s %8s %8s %8s %8s\n", "z", "truth", "median", "lower", "upper");
    for (std::size_t k = 0; k < zs.size(); ++k)
        std::printf("%6.2f %8.3f %8.3f %8.3f %8.3f\n", zs[k], sim_population_season_curve(zs[k]), h.median[k],
                    h.lower[k], h.upper[k]);

    std::printf("\nacceptance (chain 1): alpha %.2f, nu1 %.2f, nu2 %.2f\n", draws.acceptance[0].at("alpha"),
                draws.acceptance[0].at("nu1"), draws.acceptance[0].at("nu2"));
    return 0;
}
