#pragma once
// Small hand-built datasets shared by the unit tests.

#include "perftraj/model.hpp"

#include <string>
#include <vector>

namespace fixture {

inline perftraj::Performance perf(double value, double age, int season, double z, Eigen::VectorXd x = {}) {
    perftraj::Performance p;
    p.value = value;
    p.age = age;
    p.season = season;
    p.season_fraction = z;
    p.time = (season - 1) + z;
    p.confounders = x;
    return p;
}

/// M athletes, S seasons each, fractions spread evenly inside every season.
inline perftraj::Dataset grid_dataset(int athletes, int seasons, int per_season, int confounders = 0,
                                      unsigned seed = 7) {
    perftraj::Dataset data;
    perftraj::Rng rng(seed);
    for (int c = 0; c < confounders; ++c) data.confounder_names.push_back("x" + std::to_string(c + 1));
    for (int i = 0; i < athletes; ++i) {
        perftraj::Athlete a;
        a.id = "a" + std::to_string(i + 1);
        a.num_seasons = seasons;
        a.age_at_start = 18.0 + i % 5;
        for (int s = 1; s <= seasons; ++s)
            for (int k = 0; k < per_season; ++k) {
                const double z = (k + 0.5) / per_season;
                Eigen::VectorXd x(confounders);
                for (int c = 0; c < confounders; ++c) x(c) = (k + c) % 2;
                a.performances.push_back(perf(60.0 + perftraj::rand::std_normal(rng), a.age_at_start + s - 1 + z, s, z, x));
            }
        data.athletes.push_back(a);
    }
    return data;
}

}  // namespace fixture
