#pragma once
// File formats: performance CSV, key = value configuration, binary draw
// archive, run manifest and plot-data CSV exports.
//
// Archive layout (little-endian):
//   "PTDRAWS\0"                    8 bytes
//   format version                 uint32
//   header length                  uint64
//   header                         UTF-8 JSON (layout, names, metadata)
//   chain blocks                   per chain, draws x parameters doubles, column-major
//   checksum                       uint64 FNV-1a of every preceding byte

#include "chain.hpp"
#include "model.hpp"
#include "simgen.hpp"
#include "summaries.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace perftraj {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr std::uint32_t kArchiveVersion = 1;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Split one CSV line; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                field += '"';
                ++k;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(field));
            field.clear();
        } else {
            field += c;
        }
    }
    out.push_back(trim(field));
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": cannot parse number '" + s + "'");
    }
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
inline long days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

struct Date {
    int year = 1970;
    unsigned month = 1, day = 1;
    long days() const { return days_from_civil(year, month, day); }
};

inline Date parse_date(const std::string& s, const std::string& where) {
    Date d;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%d-%u-%u%c", &d.year, &d.month, &d.day, &extra) != 3 || d.month < 1 || d.month > 12 ||
        d.day < 1 || d.day > 31)
        throw DataError(where + ": cannot parse ISO date '" + s + "'");
    return d;
}

/// Month/day of the season start, written "MM-DD".
struct SeasonStart {
    unsigned month = 1, day = 1;
};

inline SeasonStart parse_season_start(const std::string& s) {
    SeasonStart out;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%u-%u%c", &out.month, &out.day, &extra) != 2 || out.month < 1 || out.month > 12 ||
        out.day < 1 || out.day > 31)
        throw std::invalid_argument("season start must be MM-DD, got '" + s + "'");
    return out;
}

/// Calendar year of the most recent season start on or before the given day number.
inline int season_start_year(long day, SeasonStart start) {
    // Walk the candidate years around the date's own year.
    int year = 1970 + static_cast<int>(day / 365);
    for (int y = year + 2; y >= year - 3; --y)
        if (days_from_civil(y, start.month, start.day) <= day) return y;
    throw DataError("cannot place date in a season");
}

}  // namespace io

struct LoadOptions {
    std::vector<std::string> confounders;  // column names used as confounders
    io::SeasonStart season_start{};
    int min_performances = 1;
    double days_per_year = 365.25;
};

struct LoadReport {
    std::vector<std::string> dropped;  // "id: reason"
    int rows = 0;
};

/// Column whose values are all 25 or 50 is coded 1 for 25 m (short course), 0 otherwise.
inline bool is_pool_column(const std::vector<double>& values) {
    if (values.empty()) return false;
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 25.0 || v == 50.0; });
}

/// Read a performance CSV. Required columns: athlete_id, performance, and either
/// date (ISO) or time (years since the first season start); age comes from an
/// age column or from birth_date when dates are given.
inline Dataset load_dataset(std::istream& in, const LoadOptions& opt = {}, LoadReport* report = nullptr) {
    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!io::trim(line).empty()) {
            header = io::split_csv(line);
            break;
        }
    }
    if (header.empty()) throw DataError("input has no header row");
    auto find = [&](const std::string& name) -> int {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return static_cast<int>(j);
        return -1;
    };
    const int c_id = find("athlete_id"), c_perf = find("performance"), c_date = find("date"), c_time = find("time"),
              c_age = find("age"), c_birth = find("birth_date");
    if (c_id < 0) throw DataError("missing column athlete_id");
    if (c_perf < 0) throw DataError("missing column performance");
    if (c_date < 0 && c_time < 0) throw DataError("need a date or a time column");
    if (c_age < 0 && (c_birth < 0 || c_date < 0)) throw DataError("need an age column, or birth_date with date");
    std::vector<int> c_conf;
    for (const auto& name : opt.confounders) {
        const int c = find(name);
        if (c < 0) throw DataError("missing confounder column " + name);
        c_conf.push_back(c);
    }

    struct Row {
        int line;
        double value, age, time;
        std::vector<double> x;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> rows;
    std::map<std::string, long> first_day;
    std::map<std::string, std::vector<std::pair<long, Row>>> dated;
    std::vector<std::vector<double>> conf_values(c_conf.size());

    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        const auto f = io::split_csv(line);
        if (f.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
        Row r;
        r.line = line_no;
        const std::string& id = f[c_id];
        if (id.empty()) throw DataError(where + ": empty athlete_id");
        r.value = io::parse_double(f[c_perf], where);
        for (std::size_t j = 0; j < c_conf.size(); ++j) {
            if (f[c_conf[j]].empty()) throw DataError(where + ": missing confounder " + header[c_conf[j]]);
            r.x.push_back(io::parse_double(f[c_conf[j]], where));
            conf_values[j].push_back(r.x.back());
        }
        if (!rows.count(id) && !dated.count(id)) order.push_back(id);
        if (c_date >= 0) {
            const long day = io::parse_date(f[c_date], where).days();
            if (c_age >= 0) {
                r.age = io::parse_double(f[c_age], where);
            } else {
                r.age = static_cast<double>(day - io::parse_date(f[c_birth], where).days()) / opt.days_per_year;
            }
            dated[id].push_back({day, r});
        } else {
            r.time = io::parse_double(f[c_time], where);
            r.age = io::parse_double(f[c_age], where);
            rows[id].push_back(r);
        }
    }

    // The calendar decides the season; z is the day of that season over the year length.
    for (auto& [id, list] : dated) {
        std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        const int first_year = io::season_start_year(list.front().first, opt.season_start);
        for (auto& [day, r] : list) {
            const int year = io::season_start_year(day, opt.season_start);
            const long start = io::days_from_civil(year, opt.season_start.month, opt.season_start.day);
            r.time = (year - first_year) + static_cast<double>(day - start) / opt.days_per_year;
            rows[id].push_back(r);
        }
    }

    std::vector<bool> pool(c_conf.size());
    for (std::size_t j = 0; j < c_conf.size(); ++j) pool[j] = is_pool_column(conf_values[j]);

    Dataset data;
    data.season_length = 1.0;
    data.confounder_names = opt.confounders;
    for (const auto& id : order) {
        auto& list = rows[id];
        std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
        if (static_cast<int>(list.size()) < opt.min_performances) {
            if (report) report->dropped.push_back(id + ": " + std::to_string(list.size()) + " performances");
            continue;
        }
        Athlete a;
        a.id = id;
        a.age_at_start = list.front().age - list.front().time;
        for (const auto& r : list) {
            if (r.time < 0.0) throw DataError("line " + std::to_string(r.line) + ": negative calendar time");
            Performance p;
            p.value = r.value;
            p.age = r.age;
            const double scaled = r.time / data.season_length;
            const int s = static_cast<int>(std::floor(scaled));
            p.season = s + 1;
            p.season_fraction = scaled - s;
            p.time = (s + p.season_fraction) * data.season_length;
            p.confounders.resize(static_cast<Eigen::Index>(r.x.size()));
            for (std::size_t j = 0; j < r.x.size(); ++j) p.confounders(j) = pool[j] ? (r.x[j] == 25.0 ? 1.0 : 0.0) : r.x[j];
            a.num_seasons = std::max(a.num_seasons, p.season);
            a.performances.push_back(std::move(p));
        }
        data.athletes.push_back(std::move(a));
        if (report) report->rows += static_cast<int>(list.size());
    }
    if (data.athletes.empty()) throw DataError("no athletes left after filtering");
    validate(data);
    return data;
}

inline Dataset load_dataset(const std::string& path, const LoadOptions& opt = {}, LoadReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return load_dataset(in, opt, report);
}

/// CSV with athlete_id,time,age,performance plus confounder columns; reloadable by load_dataset.
inline void write_dataset(std::ostream& out, const Dataset& data) {
    out.precision(17);
    out << "athlete_id,time,age,performance";
    for (const auto& n : data.confounder_names) out << ',' << n;
    out << '\n';
    for (const auto& a : data.athletes)
        for (const auto& p : a.performances) {
            out << a.id << ',' << p.time << ',' << p.age << ',' << p.value;
            for (Eigen::Index j = 0; j < p.confounders.size(); ++j) out << ',' << p.confounders(j);
            out << '\n';
        }
}

// ---------------------------------------------------------------------------
// Configuration

/// Everything a run needs besides the data.
struct RunConfig {
    PriorConfig prior{};
    ChainConfig chain{};
    SimDesign sim{};
    LoadOptions load{};
};

namespace io {

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

}  // namespace io

/// Apply one key. Unknown keys are errors.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto num = [&]() { return io::parse_double(value, "config key " + key); };
    auto integer = [&]() { return static_cast<long>(std::llround(num())); };
    PriorConfig& p = cfg.prior;
    ChainConfig& c = cfg.chain;
    SimDesign& s = cfg.sim;
    std::map<std::string, double*> reals{
        {"fixed_effect_precision", &p.fixed_effect_precision},
        {"lambda0.shape", &p.lambda0.shape}, {"lambda0.rate", &p.lambda0.rate},
        {"tau0.shape", &p.tau0.shape}, {"tau0.rate", &p.tau0.rate},
        {"lambda1.shape", &p.lambda1.shape}, {"lambda1.scale", &p.lambda1.scale},
        {"tau1.shape", &p.tau1.shape}, {"tau1.scale", &p.tau1.scale},
        {"sigma2_a.shape", &p.sigma2_a.shape}, {"sigma2_a.scale", &p.sigma2_a.scale},
        {"sigma2_m.shape", &p.sigma2_m.shape}, {"sigma2_m.scale", &p.sigma2_m.scale},
        {"sigma2_mu.shape", &p.sigma2_mu.shape}, {"sigma2_mu.scale", &p.sigma2_mu.scale},
        {"sigma2_eta.shape", &p.sigma2_eta.shape}, {"sigma2_eta.scale", &p.sigma2_eta.scale},
        {"nu.shape", &p.nu.shape}, {"nu.rate", &p.nu.rate},
        {"alpha_variance", &p.alpha_variance},
        {"c2.shape", &p.c2.shape}, {"c2.rate", &p.c2.rate},
        {"d2.shape", &p.d2.shape}, {"d2.rate", &p.d2.rate},
        {"sigma2_beta.shape", &p.sigma2_beta.shape}, {"sigma2_beta.scale", &p.sigma2_beta.scale},
        {"adapt.target_univariate", &c.adaptation.target_univariate},
        {"adapt.target_multivariate", &c.adaptation.target_multivariate},
        {"adapt.decay", &c.adaptation.decay},
        {"sim.p1", &s.p1}, {"sim.poisson_low", &s.poisson_low}, {"sim.poisson_high", &s.poisson_high},
        {"sim.entry_age_min", &s.entry_age_min}, {"sim.entry_age_max", &s.entry_age_max},
        {"sim.sigma2_a", &s.sigma2_a}, {"sim.sigma2_b", &s.sigma2_b},
        {"sim.alpha", &s.alpha}, {"sim.nu1", &s.nu1}, {"sim.nu2", &s.nu2},
        {"sim.sigma2_error", &s.sigma2_error},
        {"sim.eta_initial_var", &s.eta_initial_var}, {"sim.eta_increment_var", &s.eta_increment_var},
    };
    if (auto it = reals.find(key); it != reals.end()) {
        *it->second = num();
    } else if (key == "degree") {
        p.degree = static_cast<int>(integer());
    } else if (key == "max_order") {
        p.max_order = static_cast<int>(integer());
    } else if (key == "direction") {
        if (value == "negative") p.direction = Improvement::Negative;
        else if (value == "positive") p.direction = Improvement::Positive;
        else throw std::invalid_argument("direction must be negative or positive");
    } else if (key == "iterations") {
        c.total_iterations = integer();
    } else if (key == "burn_in") {
        c.burn_in = integer();
    } else if (key == "thin") {
        c.thin = integer();
    } else if (key == "chains") {
        c.num_chains = static_cast<int>(integer());
    } else if (key == "seed") {
        c.seed = std::stoull(value);
        s.seed = c.seed;
    } else if (key == "record_latents") {
        c.record_latents = io::parse_bool(value);
    } else if (key == "cone_sweeps") {
        c.cone_sweeps = static_cast<int>(integer());
    } else if (key == "adapt.switch_after") {
        c.adaptation.switch_after = integer();
    } else if (key == "sim.num_athletes") {
        s.num_athletes = static_cast<int>(integer());
    } else if (key == "sim.min_per_season") {
        s.min_per_season = static_cast<int>(integer());
    } else if (key == "sim.max_per_season") {
        s.max_per_season = static_cast<int>(integer());
    } else if (key == "season_start") {
        cfg.load.season_start = io::parse_season_start(value);
    } else if (key == "min_performances") {
        cfg.load.min_performances = static_cast<int>(integer());
    } else if (key == "confounders") {
        cfg.load.confounders.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!io::trim(item).empty()) cfg.load.confounders.push_back(io::trim(item));
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

inline RunConfig load_config(std::istream& in, RunConfig base = {}) {
    for (const auto& [k, v] : io::parse_key_values(in)) apply_config_key(base, k, v);
    return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    return load_config(in, std::move(base));
}

/// Canonical text form: every key in a fixed order; reloading it reproduces the config.
inline std::string config_text(const RunConfig& cfg) {
    std::ostringstream o;
    o.precision(17);
    const PriorConfig& p = cfg.prior;
    const ChainConfig& c = cfg.chain;
    const SimDesign& s = cfg.sim;
    o << "degree = " << p.degree << "\nmax_order = " << p.max_order
      << "\ndirection = " << (p.direction == Improvement::Negative ? "negative" : "positive")
      << "\nfixed_effect_precision = " << p.fixed_effect_precision;
    auto g = [&](const char* n, const GammaPrior& v) { o << '\n' << n << ".shape = " << v.shape << '\n' << n << ".rate = " << v.rate; };
    auto ig = [&](const char* n, const InverseGammaPrior& v) { o << '\n' << n << ".shape = " << v.shape << '\n' << n << ".scale = " << v.scale; };
    g("lambda0", p.lambda0);
    g("tau0", p.tau0);
    ig("lambda1", p.lambda1);
    ig("tau1", p.tau1);
    ig("sigma2_a", p.sigma2_a);
    ig("sigma2_m", p.sigma2_m);
    ig("sigma2_mu", p.sigma2_mu);
    ig("sigma2_eta", p.sigma2_eta);
    g("nu", p.nu);
    o << "\nalpha_variance = " << p.alpha_variance;
    g("c2", p.c2);
    g("d2", p.d2);
    ig("sigma2_beta", p.sigma2_beta);
    o << "\niterations = " << c.total_iterations << "\nburn_in = " << c.burn_in << "\nthin = " << c.thin
      << "\nchains = " << c.num_chains << "\nseed = " << c.seed << "\nrecord_latents = " << (c.record_latents ? "true" : "false")
      << "\ncone_sweeps = " << c.cone_sweeps << "\nadapt.target_univariate = " << c.adaptation.target_univariate
      << "\nadapt.target_multivariate = " << c.adaptation.target_multivariate << "\nadapt.decay = " << c.adaptation.decay
      << "\nadapt.switch_after = " << c.adaptation.switch_after;
    o << "\nsim.num_athletes = " << s.num_athletes << "\nsim.p1 = " << s.p1 << "\nsim.poisson_low = " << s.poisson_low
      << "\nsim.poisson_high = " << s.poisson_high << "\nsim.min_per_season = " << s.min_per_season
      << "\nsim.max_per_season = " << s.max_per_season << "\nsim.entry_age_min = " << s.entry_age_min
      << "\nsim.entry_age_max = " << s.entry_age_max << "\nsim.sigma2_a = " << s.sigma2_a << "\nsim.sigma2_b = " << s.sigma2_b
      << "\nsim.alpha = " << s.alpha << "\nsim.nu1 = " << s.nu1 << "\nsim.nu2 = " << s.nu2
      << "\nsim.sigma2_error = " << s.sigma2_error << "\nsim.eta_initial_var = " << s.eta_initial_var
      << "\nsim.eta_increment_var = " << s.eta_increment_var;
    char start[8];
    std::snprintf(start, sizeof start, "%02u-%02u", cfg.load.season_start.month, cfg.load.season_start.day);
    o << "\nseason_start = " << start << "\nmin_performances = " << cfg.load.min_performances << "\nconfounders = ";
    for (std::size_t j = 0; j < cfg.load.confounders.size(); ++j) o << (j ? "," : "") << cfg.load.confounders[j];
    o << '\n';
    return o.str();
}

// ---------------------------------------------------------------------------
// Draw archive

namespace io {

inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    for (std::size_t k = 0; k < n; ++k) {
        h ^= static_cast<unsigned char>(data[k]);
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace io

/// What the summaries need to know about the fitted data besides the draws.
struct FitMetadata {
    std::vector<std::string> athlete_ids;
    std::vector<double> age_at_start;
    std::vector<std::string> confounder_names;
    double mean_age = 0.0;
    double season_length = 1.0;
    int max_order = 4;
    int degree = 4;
    Improvement direction = Improvement::Negative;
};

inline FitMetadata fit_metadata(const Dataset& data, const PriorConfig& prior) {
    FitMetadata m;
    for (const auto& a : data.athletes) {
        m.athlete_ids.push_back(a.id);
        m.age_at_start.push_back(a.age_at_start);
    }
    m.confounder_names = data.confounder_names;
    m.mean_age = prior.mean_age;
    m.season_length = data.season_length;
    m.max_order = prior.max_order;
    m.degree = prior.degree;
    m.direction = prior.direction;
    return m;
}

struct Archive {
    PosteriorDraws draws;
    FitMetadata meta;
};

inline std::string archive_bytes(const Archive& a) {
    const PosteriorDraws& d = a.draws;
    nlohmann::json h;
    h["degree"] = d.layout.degree;
    h["num_confounders"] = d.layout.num_confounders;
    h["max_order"] = d.layout.max_order;
    h["seasons"] = d.layout.seasons;
    h["rows"] = d.layout.rows;
    h["latents"] = d.layout.latents;
    h["num_parameters"] = d.names.size();
    h["num_chains"] = d.num_chains();
    h["draws_per_chain"] = d.draws_per_chain();
    h["total_iterations"] = d.total_iterations;
    h["burn_in"] = d.burn_in;
    h["thin"] = d.thin;
    h["acceptance"] = d.acceptance;
    h["athlete_ids"] = a.meta.athlete_ids;
    h["age_at_start"] = a.meta.age_at_start;
    h["confounder_names"] = a.meta.confounder_names;
    h["mean_age"] = a.meta.mean_age;
    h["season_length"] = a.meta.season_length;
    h["direction"] = a.meta.direction == Improvement::Negative ? "negative" : "positive";
    const std::string header = h.dump();

    std::string out("PTDRAWS\0", 8);
    auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
    put(&kArchiveVersion, sizeof kArchiveVersion);
    const std::uint64_t hlen = header.size();
    put(&hlen, sizeof hlen);
    out += header;
    for (const auto& c : d.chains) put(c.data(), sizeof(double) * static_cast<std::size_t>(c.size()));
    const std::uint64_t sum = io::fnv1a(out);
    put(&sum, sizeof sum);
    return out;
}

inline void persist_draws(const Archive& a, const std::string& path) {
    const std::string bytes = archive_bytes(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

inline Archive archive_from_bytes(const std::string& bytes) {
    const std::size_t fixed = 8 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed + sizeof(std::uint64_t)) throw IoError("archive truncated");
    if (bytes.compare(0, 8, std::string("PTDRAWS\0", 8)) != 0) throw IoError("not a draw archive");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 8, sizeof version);
    if (version != kArchiveVersion)
        throw IoError("archive format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kArchiveVersion) + ")");
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
    if (io::fnv1a(bytes.data(), bytes.size() - sizeof stored) != stored)
        throw IoError("archive checksum mismatch (truncated or corrupted)");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 12, sizeof hlen);
    if (fixed + hlen + sizeof stored > bytes.size()) throw IoError("archive truncated");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(fixed, hlen));
    } catch (const std::exception& e) {
        throw IoError(std::string("archive header unreadable: ") + e.what());
    }

    Archive a;
    PosteriorDraws& d = a.draws;
    d.layout.degree = h.at("degree");
    d.layout.num_confounders = h.at("num_confounders");
    d.layout.max_order = h.at("max_order");
    d.layout.seasons = h.at("seasons").get<std::vector<int>>();
    d.layout.rows = h.at("rows").get<std::vector<int>>();
    d.layout.latents = h.at("latents");
    d.names = parameter_names(d.layout);
    if (d.names.size() != h.at("num_parameters").get<std::size_t>()) throw IoError("archive layout inconsistent");
    d.total_iterations = h.at("total_iterations");
    d.burn_in = h.at("burn_in");
    d.thin = h.at("thin");
    d.acceptance = h.at("acceptance").get<std::vector<std::map<std::string, double>>>();
    const int chains = h.at("num_chains");
    const long rows = h.at("draws_per_chain");
    const std::size_t cols = d.names.size();
    const std::size_t block = static_cast<std::size_t>(rows) * cols * sizeof(double);
    if (fixed + hlen + chains * block + sizeof stored != bytes.size()) throw IoError("archive size does not match header");
    std::size_t pos = fixed + hlen;
    for (int c = 0; c < chains; ++c) {
        Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols));
        std::memcpy(m.data(), bytes.data() + pos, block);
        pos += block;
        d.chains.push_back(std::move(m));
    }
    a.meta.athlete_ids = h.at("athlete_ids").get<std::vector<std::string>>();
    a.meta.age_at_start = h.at("age_at_start").get<std::vector<double>>();
    a.meta.confounder_names = h.at("confounder_names").get<std::vector<std::string>>();
    a.meta.mean_age = h.at("mean_age");
    a.meta.season_length = h.at("season_length");
    a.meta.max_order = d.layout.max_order;
    a.meta.degree = d.layout.degree;
    a.meta.direction = h.at("direction") == "negative" ? Improvement::Negative : Improvement::Positive;
    return a;
}

inline Archive restore_draws(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open archive " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return archive_from_bytes(ss.str());
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
    std::vector<std::string> inputs;
    std::string config_hash;
    std::uint64_t seed = 0;
    ChainConfig chain;
    std::string version = kVersion;
    std::string started, finished;  // UTC, ISO-8601
};

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline nlohmann::json to_json(const RunManifest& m, const std::string& config) {
    return {{"inputs", m.inputs},
            {"config_hash", m.config_hash},
            {"config", config},
            {"seed", m.seed},
            {"chain",
             {{"iterations", m.chain.total_iterations},
              {"burn_in", m.chain.burn_in},
              {"thin", m.chain.thin},
              {"chains", m.chain.num_chains}}},
            {"version", m.version},
            {"started", m.started},
            {"finished", m.finished}};
}

// ---------------------------------------------------------------------------
// Plot data

inline void write_band_csv(std::ostream& out, const std::string& x_name, const Band& band, bool header = true,
                           const std::string& prefix_cols = "", const std::string& prefix_vals = "") {
    out.precision(10);
    if (header) out << prefix_cols << x_name << ",median,lower,upper\n";
    for (std::size_t k = 0; k < band.grid.size(); ++k)
        out << prefix_vals << band.grid[k] << ',' << band.median[k] << ',' << band.lower[k] << ',' << band.upper[k]
            << '\n';
}

/// Performances adjusted to the baseline confounder level (for pool length: 50 m) with the posterior-mean zeta.
inline void write_adjusted_performances(std::ostream& out, const Dataset& data, const Eigen::VectorXd& zeta_mean) {
    out.precision(10);
    out << "athlete_id,time,age,performance,adjusted\n";
    for (const auto& a : data.athletes)
        for (const auto& p : a.performances) {
            const double shift = p.confounders.size() ? p.confounders.dot(zeta_mean) : 0.0;
            out << a.id << ',' << p.time << ',' << p.age << ',' << p.value << ',' << p.value - shift << '\n';
        }
}

inline nlohmann::json to_json(const TruthRecord& t) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : t.athletes) {
        auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
        arr.push_back({{"entry_age", a.entry_age},
                       {"turn", a.turn},
                       {"amplitude", a.amplitude},
                       {"season_turn", vec(a.season_turn)},
                       {"season_amplitude", vec(a.season_amplitude)},
                       {"knots", vec(a.knots)}});
    }
    return {{"athletes", arr}};
}

}  // namespace perftraj
