// perftraj: simulate, fit, summarize and diagnose performance-trajectory models.

#include "perftraj/perftraj.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace perftraj;

namespace {

struct Flags {
    std::string input;
    std::string config;
    std::string out = ".";
    std::string season_start;
    std::string confounders;
    std::string data;
    std::uint64_t seed = 0;
    int chains = 0;
    long iters = 0, burnin = -1, thin = 0;
    int min_performances = 0;
    int replications = 0;
    bool study = false;
    bool have_seed = false;
};

RunConfig resolve_config(const Flags& f) {
    RunConfig cfg;
    if (!f.config.empty()) cfg = load_config(f.config, cfg);
    if (f.have_seed) {
        cfg.chain.seed = f.seed;
        cfg.sim.seed = f.seed;
    }
    if (f.chains > 0) cfg.chain.num_chains = f.chains;
    if (f.iters > 0) cfg.chain.total_iterations = f.iters;
    if (f.burnin >= 0) cfg.chain.burn_in = f.burnin;
    if (f.thin > 0) cfg.chain.thin = f.thin;
    if (f.min_performances > 0) cfg.load.min_performances = f.min_performances;
    if (!f.season_start.empty()) cfg.load.season_start = io::parse_season_start(f.season_start);
    if (!f.confounders.empty()) apply_config_key(cfg, "confounders", f.confounders);
    return cfg;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream o(p);
    if (!o) throw IoError("cannot write " + p.string());
    return o;
}

void cmd_simulate(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    fs::create_directories(f.out);
    if (f.study) {
        const int reps = f.replications > 0 ? f.replications : 1;
        const auto records = run_study({cfg.sim}, reps, cfg.chain, cfg.prior);
        auto o = open_out(fs::path(f.out) / "study.csv");
        o.precision(10);
        o << "cell,replication,num_athletes,p1,sigma2_a,sigma2_b,ok,rmise_g,rmise_h,rmise_h_athlete,rmise_h_season,"
             "amrse_eta,spearman_tau2_a,spearman_lambda2_b,error\n";
        for (const auto& r : records)
            o << r.cell << ',' << r.replication << ',' << r.design.num_athletes << ',' << r.design.p1 << ','
              << r.design.sigma2_a << ',' << r.design.sigma2_b << ',' << (r.ok ? 1 : 0) << ',' << r.rmise_population
              << ',' << r.rmise_population_season << ',' << r.rmise_athlete_season << ',' << r.rmise_season << ','
              << r.armse_knots << ',' << r.spearman_tau << ',' << r.spearman_lambda << ",\"" << r.error << "\"\n";
        std::cout << "wrote " << records.size() << " study records to " << (fs::path(f.out) / "study.csv") << "\n"
                  << "note: simulated season curves need not vanish at z = 1, the fitted ones do\n";
        return;
    }
    Rng rng(cfg.sim.seed);
    const SimulatedData sim = generate_dataset(cfg.sim, rng);
    {
        auto o = open_out(fs::path(f.out) / "dataset.csv");
        write_dataset(o, sim.data);
    }
    {
        auto o = open_out(fs::path(f.out) / "truth.json");
        o << to_json(sim.truth).dump(1) << '\n';
    }
    std::cout << "simulated " << sim.data.num_athletes() << " athletes, " << sim.data.num_performances()
              << " performances\n";
}

void cmd_fit(const Flags& f) {
    RunManifest manifest;
    manifest.started = utc_now();
    RunConfig cfg = resolve_config(f);
    LoadReport report;
    const Dataset data = load_dataset(f.input, cfg.load, &report);
    for (const auto& d : report.dropped) std::cerr << "dropped athlete " << d << "\n";
    if (data.num_athletes() < 5)
        std::cerr << "warning: " << data.num_athletes()
                  << " athletes barely inform the group-level scales; the default vague priors may let the chain drift\n";
    cfg.prior.mean_age = data.mean_age();
    const PosteriorDraws draws = run_chain(data, cfg.prior, cfg.chain);
    fs::create_directories(f.out);
    persist_draws({draws, fit_metadata(data, cfg.prior)}, (fs::path(f.out) / "draws.ptd").string());

    manifest.finished = utc_now();
    manifest.inputs = {f.input};
    if (!f.config.empty()) manifest.inputs.push_back(f.config);
    const std::string text = config_text(cfg);
    manifest.config_hash = hex64(io::fnv1a(text));
    manifest.seed = cfg.chain.seed;
    manifest.chain = cfg.chain;
    auto o = open_out(fs::path(f.out) / "manifest.json");
    o << to_json(manifest, text).dump(1) << '\n';
    std::cout << "recorded " << draws.num_chains() << " chains x " << draws.draws_per_chain() << " draws\n";
}

Archive load_nonempty(const std::string& path) {
    Archive a = restore_draws(path);
    if (a.draws.empty()) throw std::invalid_argument("archive " + path + " holds no draws");
    return a;
}

void cmd_summarize(const Flags& f) {
    const Archive a = load_nonempty(f.input);
    const auto states = all_states(a.draws);
    const FitMetadata& m = a.meta;
    const int n = m.max_order;
    fs::create_directories(f.out);
    const fs::path dir(f.out);

    double age_lo = 1e300, age_hi = -1e300;
    for (std::size_t i = 0; i < m.age_at_start.size(); ++i) {
        age_lo = std::min(age_lo, m.age_at_start[i]);
        age_hi = std::max(age_hi, m.age_at_start[i] + a.draws.layout.seasons[i] * m.season_length);
    }
    const int age_points = std::max(2, static_cast<int>(std::ceil((age_hi - age_lo) * 200.0)) + 1);
    const auto zgrid = season_grid();
    {
        auto o = open_out(dir / "population.csv");
        write_band_csv(o, "age", trajectory_band(states, {Trajectory::Population}, uniform_grid(age_lo, age_hi, age_points),
                                                 m.mean_age, n));
    }
    {
        auto o = open_out(dir / "population_season.csv");
        write_band_csv(o, "z", trajectory_band(states, {Trajectory::PopulationSeason}, zgrid, m.mean_age, n));
    }
    auto athlete = open_out(dir / "athlete_season.csv");
    auto season = open_out(dir / "season.csv");
    auto trend = open_out(dir / "trend.csv");
    auto fitted = open_out(dir / "fitted.csv");
    auto table = open_out(dir / "athletes.csv");
    table.precision(10);
    table << "athlete_id,psi,gamma,lambda2,tau2\n";
    for (int i = 0; i < a.draws.layout.num_athletes(); ++i) {
        const std::string id = m.athlete_ids.at(i);
        const int seasons = a.draws.layout.seasons[i];
        write_band_csv(athlete, "z", trajectory_band(states, {Trajectory::AthleteSeason, i}, zgrid, m.mean_age, n), i == 0,
                       "athlete_id,", id + ",");
        for (int s = 0; s < seasons; ++s)
            write_band_csv(season, "z",
                           trajectory_band(states, {Trajectory::SeasonSeason, i, s}, zgrid, m.mean_age, n),
                           i == 0 && s == 0, "athlete_id,season,", id + "," + std::to_string(s + 1) + ",");
        const double span = seasons * m.season_length;
        const auto tgrid = uniform_grid(0.0, span, static_cast<int>(std::ceil(span * 200.0)) + 1);
        write_band_csv(trend, "time", trajectory_band(states, {Trajectory::Trend, i}, tgrid, m.mean_age, n, m.season_length),
                       i == 0, "athlete_id,", id + ",");
        write_band_csv(fitted, "time",
                       trajectory_band(states, {Trajectory::Fitted, i}, tgrid, m.mean_age, n, m.season_length,
                                       m.age_at_start.at(i)),
                       i == 0, "athlete_id,", id + ",");
        std::vector<double> psi, gam, l2, t2;
        for (const auto& s : states) {
            psi.push_back(within_season_variability(s, i, n));
            gam.push_back(average_effect_size(s, i, n));
            l2.push_back(s.athletes[i].lambda2);
            t2.push_back(s.athletes[i].tau2);
        }
        table << id << ',' << median(psi) << ',' << median(gam) << ',' << median(l2) << ',' << median(t2) << '\n';
    }
    if (!f.data.empty()) {
        LoadOptions opt;
        opt.confounders = m.confounder_names;
        const Dataset data = load_dataset(f.data, opt);
        Eigen::VectorXd zeta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.confounder_names.size()));
        for (const auto& s : states) zeta += s.zeta;
        zeta /= static_cast<double>(states.size());
        auto o = open_out(dir / "adjusted.csv");
        write_adjusted_performances(o, data, zeta);
    }
    std::cout << "wrote summaries for " << states.size() << " draws to " << dir << "\n";
}

void cmd_diagnose(const Flags& f) {
    const Archive a = load_nonempty(f.input);
    const PosteriorDraws& d = a.draws;
    if (d.num_chains() < 2) throw std::invalid_argument("diagnose needs at least two chains");
    struct Group {
        double max_psrf = 0.0, min_ess = 1e300;
    };
    std::map<std::string, Group> groups;
    std::vector<std::string> group_order;
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (f.out != ".") {
        fs::create_directories(fs::path(f.out).parent_path().empty() ? "." : fs::path(f.out).parent_path());
        file = open_out(f.out);
        out = &file;
    }
    out->precision(6);
    *out << "parameter,PSRF,ESS\n";
    for (const auto& name : d.names) {
        const auto tr = d.trace(name);
        const double r = psrf(tr);
        const double e = d.draws_per_chain() >= 10 ? ess(tr) : static_cast<double>(d.draws_per_chain() * d.num_chains());
        *out << name << ',' << r << ',' << e << '\n';
        const std::string g = name.substr(0, name.find('['));
        if (!groups.count(g)) group_order.push_back(g);
        auto& grp = groups[g];
        if (std::isfinite(r)) grp.max_psrf = std::max(grp.max_psrf, r);
        grp.min_ess = std::min(grp.min_ess, e);
    }
    for (const auto& g : group_order)
        *out << "max/min " << g << ',' << groups[g].max_psrf << ',' << groups[g].min_ess << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian performance-trajectory models"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "key = value configuration file");
        sub->add_option("--seed", f.seed, "master seed")->each([&](const std::string&) { f.have_seed = true; });
        sub->add_option("--chains", f.chains, "number of chains");
        sub->add_option("--iters", f.iters, "total iterations per chain");
        sub->add_option("--burnin", f.burnin, "burn-in iterations");
        sub->add_option("--thin", f.thin, "thinning interval");
        sub->add_option("--out", f.out, "output directory (diagnose: output file)");
        sub->add_option("--min-performances", f.min_performances, "drop athletes with fewer performances");
        sub->add_option("--season-start", f.season_start, "season start as MM-DD");
    };

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset (or run a study with --study)");
    common(sim);
    sim->add_flag("--study", f.study, "run the replicated simulation study instead");
    sim->add_option("--replications", f.replications, "study replications");

    auto* fit = app.add_subcommand("fit", "fit the model and write a draw archive and manifest");
    common(fit);
    fit->add_option("--input", f.input, "performance CSV")->required();
    fit->add_option("--confounders", f.confounders, "comma-separated confounder columns");

    auto* sum = app.add_subcommand("summarize", "write trajectory bands and athlete tables");
    common(sum);
    sum->add_option("--input", f.input, "draw archive")->required();
    sum->add_option("--data", f.data, "original CSV, for the confounder-adjusted export");

    auto* diag = app.add_subcommand("diagnose", "PSRF and ESS for every recorded parameter");
    common(diag);
    diag->add_option("--input", f.input, "draw archive")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (sim->parsed()) cmd_simulate(f);
        else if (fit->parsed()) cmd_fit(f);
        else if (sum->parsed()) cmd_summarize(f);
        else if (diag->parsed()) cmd_diagnose(f);
    } catch (const ChainError& e) {
        std::cerr << "error: " << e.what() << "\nstate:\n" << e.state_dump();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
