#include "sotmle/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string_view>
#include <unistd.h>

#include "sotmle/bandwidth_selection.hpp"
#include "sotmle/simulation.hpp"

#ifndef SOTMLE_VERSION
#define SOTMLE_VERSION "0.0.0"
#endif

namespace sotmle {

std::string version() { return SOTMLE_VERSION; }

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool parse_double(const std::string& text, double& value) {
    if (text.empty()) return false;
    char* end = nullptr;
    errno = 0;
    value = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && errno != ERANGE;
}

std::string full(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string hex64(std::uint64_t x) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

}  // namespace

CsvData read_data_csv(std::istream& in, bool auto_scale) {
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        header = split(t, ',');
        break;
    }
    if (header.empty()) throw TmleError("data file has no header row");

    int col_a = -1;
    int col_y = -1;
    int col_t = -1;
    std::map<std::size_t, int> wcols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        const int ci = static_cast<int>(c);
        auto seen = [&](int& slot) {
            if (slot >= 0) throw TmleError("line " + std::to_string(lineno) + ": duplicate column '" + h + "'");
            slot = ci;
        };
        if (h == "a") seen(col_a);
        else if (h == "y") seen(col_y);
        else if (h == "t") seen(col_t);
        else if (h.size() > 1 && h[0] == 'w' && std::all_of(h.begin() + 1, h.end(), ::isdigit)) {
            const std::size_t j = std::stoul(h.substr(1));
            if (j == 0 || !wcols.emplace(j, ci).second) {
                throw TmleError("line " + std::to_string(lineno) + ": bad covariate column '" + h + "'");
            }
        } else {
            throw TmleError("line " + std::to_string(lineno) + ": unknown column '" + h + "'");
        }
    }
    if (col_a < 0) throw TmleError("line " + std::to_string(lineno) + ": missing column 'a'");
    if (col_y < 0) throw TmleError("line " + std::to_string(lineno) + ": missing column 'y'");
    if (wcols.empty()) throw TmleError("line " + std::to_string(lineno) + ": no covariate columns w1..wd");
    const std::size_t d = wcols.size();
    if (wcols.rbegin()->first != d) {
        throw TmleError("line " + std::to_string(lineno) + ": covariate columns must be w1..w" + std::to_string(d));
    }

    struct Row {
        std::vector<double> w;
        int a;
        std::optional<double> y;
        int t;
    };
    std::vector<Row> rows;
    std::size_t row_index = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        ++row_index;
        const std::string where = "line " + std::to_string(lineno) + " (row " + std::to_string(row_index) + ")";
        const auto f = split(t, ',');
        if (f.size() != header.size()) {
            throw TmleError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
        }
        Row r;
        r.w.resize(d);
        for (const auto& [j, c] : wcols) {
            if (!parse_double(f[static_cast<std::size_t>(c)], r.w[j - 1]) || !std::isfinite(r.w[j - 1])) {
                throw TmleError(where + ": w" + std::to_string(j) + " is not a finite number");
            }
        }
        const std::string& av = f[static_cast<std::size_t>(col_a)];
        if (av != "0" && av != "1") throw TmleError(where + ": a must be 0 or 1");
        r.a = av == "1" ? 1 : 0;
        const std::string& yv = f[static_cast<std::size_t>(col_y)];
        if (r.a == 0 && !yv.empty()) throw TmleError(where + ": outcome present for unit with a = 0");
        if (r.a == 1) {
            double y = 0.0;
            if (yv.empty()) throw TmleError(where + ": missing outcome for observed unit");
            if (!parse_double(yv, y) || !std::isfinite(y)) throw TmleError(where + ": y is not a finite number");
            r.y = y;
        }
        r.t = 0;
        if (col_t >= 0) {
            const std::string& tv = f[static_cast<std::size_t>(col_t)];
            if (tv != "0" && tv != "1") throw TmleError(where + ": t must be 0 or 1");
            r.t = tv == "1" ? 1 : 0;
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw TmleError("empty dataset");

    CsvData out;
    std::vector<double> ys;
    for (const auto& r : rows) {
        if (r.y) ys.push_back(*r.y);
    }
    const bool binary = std::all_of(ys.begin(), ys.end(), [](double y) { return y == 0.0 || y == 1.0; });
    const auto [ylo, yhi] = std::minmax_element(ys.begin(), ys.end());
    const bool constant_in_unit = !ys.empty() && *ylo == *yhi && *ylo >= 0.0 && *ylo <= 1.0;
    if (!binary && !ys.empty()) {
        if (auto_scale && !constant_in_unit) {
            out.scale = scale_outcome(ys).scale;
            out.scaled = true;
        } else if (std::any_of(ys.begin(), ys.end(), [](double y) { return y < 0.0 || y > 1.0; })) {
            throw TmleError("outcomes outside [0, 1] require scaling");
        }
    }
    out.data = Dataset(d);
    for (const auto& r : rows) {
        std::optional<double> y = r.y;
        if (y && out.scaled) y = (*y - out.scale.min) / (out.scale.max - out.scale.min);
        out.data.add(r.w, r.a, y);
        if (col_t >= 0) out.treatment.push_back(r.t);
    }
    return out;
}

CsvData read_data_csv_file(const std::filesystem::path& path, bool auto_scale) {
    std::ifstream in(path);
    if (!in) throw TmleError("cannot open data file '" + path.string() + "'");
    try {
        return read_data_csv(in, auto_scale);
    } catch (const TmleError& e) {
        throw TmleError(path.string() + ": " + e.what());
    }
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!fs::exists(dir)) fs::create_directories(dir);
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw TmleError("cannot write '" + tmp.string() + "'");
        f << content;
        f.flush();
        if (!f) throw TmleError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw TmleError("cannot rename onto '" + path.string() + "': " + ec.message());
    }
}

BandwidthChoice parse_bandwidth_choice(const std::string& text, int folds, std::uint64_t seed) {
    if (text == "default") return BandwidthChoice::default_rule();
    if (text == "cv") return BandwidthChoice::cross_validated(folds, seed);
    if (text.rfind("fixed:", 0) == 0) {
        std::vector<double> values;
        for (const auto& part : split(text.substr(6), ';')) {
            double v = 0.0;
            if (!parse_double(part, v)) throw TmleError("bad bandwidth value '" + part + "'");
            values.push_back(v);
        }
        return BandwidthChoice::fixed_value(values.size() == 1 ? Bandwidth(values[0]) : Bandwidth(values));
    }
    throw TmleError("bandwidth must be default, cv or fixed:<h>, got '" + text + "'");
}

namespace {

constexpr std::uint64_t kDefaultSeed = 1;
constexpr std::size_t kOracleDraws = 10000000;

struct Options {
    std::string estimator;
    std::string kernel = "gaussian";
    std::string bandwidth = "default";
    std::string fluctuation = "covariate";
    int reps = 1000;
    std::uint64_t seed = kDefaultSeed;
    std::string out;
    std::string table;
    double trunc_g = 0.01;
    int boot = 0;
    int folds = 5;
    unsigned threads = 1;
    std::string learner = "glm";
    std::string dgp = "d1";
    std::vector<std::size_t> n{1000};
    std::vector<double> p{0.5};
    std::vector<double> q{0.5};
    std::string coverage = "mc";
    std::string perturbation = "unit";
    std::size_t draws = kOracleDraws;
    std::string data;
    std::string scale = "auto";
    double level = 0.95;
    std::vector<std::string> grid;
    bool seed_given = false;
};

// Settings that determine the output; threads and paths are left out.
struct Canonical {
    std::vector<std::pair<std::string, std::string>> items;
    void add(const std::string& k, const std::string& v) { items.emplace_back(k, v); }
    std::string text() const {
        std::string s;
        for (const auto& [k, v] : items) s += k + "=" + v + "\n";
        return s;
    }
    std::uint64_t hash() const { return fnv1a(text()); }
};

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        if constexpr (std::is_floating_point_v<T>) os << full(v[i]);
        else os << v[i];
    }
    return os.str();
}

std::string header_line(std::uint64_t seed, std::uint64_t hash, const std::string& extra = {}) {
    std::string s = "# sotmle " + version() + " seed=" + std::to_string(seed) + " config_hash=" + hex64(hash);
    if (!extra.empty()) s += " " + extra;
    return s + "\n";
}

void emit(const Options& o, std::ostream& out, const std::string& content) {
    if (o.out.empty()) out << content;
    else write_file_atomic(o.out, content);
}

EstimatorConfig estimator_config(const Options& o, const std::string& estimator) {
    EstimatorConfig cfg;
    cfg.estimator = parse_estimator(estimator);
    cfg.kernel = KernelSpec::parse(o.kernel);
    cfg.bandwidth = parse_bandwidth_choice(o.bandwidth, o.folds, o.seed);
    if (o.fluctuation == "covariate") cfg.fluctuation = FluctuationMode::Covariate;
    else if (o.fluctuation == "weighted") cfg.fluctuation = FluctuationMode::Weighted;
    else throw TmleError("fluctuation must be covariate or weighted");
    cfg.truncation.g_floor = o.trunc_g;
    cfg.ci_level = o.level;
    if (o.boot > 0) {
        cfg.variance.mode = VarianceMode::Bootstrap;
        cfg.variance.bootstrap_reps = o.boot;
        cfg.variance.seed = o.seed;
    }
    cfg.variance.threads = o.threads;
    cfg.validate();
    return cfg;
}

void add_estimation_settings(Canonical& c, const Options& o, const std::string& estimator) {
    c.add("estimator", estimator);
    c.add("kernel", o.kernel);
    c.add("bandwidth", o.bandwidth);
    c.add("fluctuation", o.fluctuation);
    c.add("trunc_g", full(o.trunc_g));
    c.add("folds", std::to_string(o.folds));
    c.add("boot", std::to_string(o.boot));
    c.add("level", full(o.level));
    c.add("seed", std::to_string(o.seed));
}

std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + full(v[i]);
    return s.empty() ? "none" : s;
}

std::string report_body(const EstimateReport& r, const OutcomeScale& scale, const std::string& prefix) {
    std::ostringstream os;
    os << prefix << "estimator=" << to_string(r.estimator) << '\n';
    os << prefix << "psi=" << full(scale.unscale(r.psi)) << '\n';
    os << prefix << "se=" << full(scale.unscale_se(r.se)) << '\n';
    os << prefix << "ci_lower=" << full(scale.unscale(r.ci_lower)) << '\n';
    os << prefix << "ci_upper=" << full(scale.unscale(r.ci_upper)) << '\n';
    if (!scale.is_identity()) os << prefix << "psi_scaled=" << full(r.psi) << '\n';
    os << prefix << "epsilon=" << format_list(r.epsilon) << '\n';
    os << prefix << "score_residuals=" << format_list(r.score_residuals) << '\n';
    os << prefix << "bandwidth=" << (r.bandwidth_used ? r.bandwidth_used->to_string() : "none") << '\n';
    os << prefix << "kernel=" << r.kernel.name() << '\n';
    os << prefix << "out_of_range=" << r.out_of_range << '\n';
    os << prefix << "positivity_flag=" << r.positivity_flag << '\n';
    os << prefix << "degraded=" << r.degraded << '\n';
    os << prefix << "kernel_fallbacks=" << r.kernel_fallbacks << '\n';
    os << prefix << "density_floor_hits=" << r.density_floor_hits << '\n';
    os << prefix << "bootstrap_failures=" << r.bootstrap_failures << '\n';
    for (const auto& w : r.warnings) os << prefix << "warning=" << w << '\n';
    return os.str();
}

std::string scale_text(const CsvData& d) {
    return d.scaled ? full(d.scale.min) + ";" + full(d.scale.max) : "identity";
}

int cmd_estimate(const Options& o, std::ostream& out) {
    if (o.data.empty()) throw TmleError("estimate needs a data file");
    const CsvData csv = read_data_csv_file(o.data, o.scale == "auto");
    const std::string est = o.estimator.empty() ? "tmle1" : o.estimator;
    const EstimatorConfig cfg = estimator_config(o, est);
    const auto learner = make_learner(o.learner);
    const EstimateReport r = estimate_with_learners(csv.data, *learner, *learner, cfg);

    Canonical c;
    c.add("command", "estimate");
    add_estimation_settings(c, o, est);
    c.add("learner", o.learner);
    c.add("scale", o.scale);
    std::ostringstream os;
    os << header_line(o.seed, c.hash());
    os << "n=" << csv.data.size() << '\n' << "observed=" << csv.data.observed_count() << '\n';
    os << "outcome_scale=" << scale_text(csv) << '\n';
    os << "variance=" << (o.boot > 0 ? "bootstrap" : "influence") << '\n';
    os << "ci_level=" << full(o.level) << '\n';
    os << report_body(r, csv.scale, "");
    emit(o, out, os.str());
    return 0;
}

int cmd_ate(const Options& o, std::ostream& out) {
    if (o.data.empty()) throw TmleError("ate needs a data file");
    const CsvData csv = read_data_csv_file(o.data, o.scale == "auto");
    if (csv.treatment.empty()) throw TmleError("ate needs a t column");
    const std::string est = o.estimator.empty() ? "tmle1" : o.estimator;
    const EstimatorConfig cfg = estimator_config(o, est);
    const auto learner = make_learner(o.learner);
    const AteReport r = ate(csv.data, csv.treatment, *learner, *learner, cfg, csv.scale);

    Canonical c;
    c.add("command", "ate");
    add_estimation_settings(c, o, est);
    c.add("learner", o.learner);
    c.add("scale", o.scale);
    std::ostringstream os;
    os << header_line(o.seed, c.hash());
    os << "n=" << csv.data.size() << '\n';
    os << "outcome_scale=" << scale_text(csv) << '\n';
    os << "variance=" << (o.boot > 0 ? "bootstrap" : "influence") << '\n';
    os << "ci_level=" << full(o.level) << '\n';
    os << "psi1=" << full(r.psi1) << '\n' << "psi0=" << full(r.psi0) << '\n';
    os << "diff=" << full(r.diff) << '\n' << "se=" << full(r.se) << '\n';
    os << "ci_lower=" << full(r.ci_lower) << '\n' << "ci_upper=" << full(r.ci_upper) << '\n';
    os << "bootstrap_failures=" << r.bootstrap_failures << '\n';
    os << report_body(r.treated, csv.scale, "treated.");
    os << report_body(r.control, csv.scale, "control.");
    emit(o, out, os.str());
    return 0;
}

int cmd_bandwidth(const Options& o, std::ostream& out) {
    if (o.data.empty()) throw TmleError("bandwidth needs a data file");
    const CsvData csv = read_data_csv_file(o.data, o.scale == "auto");
    const std::string est = o.estimator.empty() ? "tmle2" : o.estimator;
    EstimatorConfig cfg = estimator_config(o, est);
    const auto learner = make_learner(o.learner);
    const NuisancePair nuisance = fit_nuisance(csv.data, *learner, *learner);

    std::vector<Bandwidth> grid;
    for (const auto& g : o.grid) grid.push_back(parse_bandwidth_choice("fixed:" + g, o.folds, o.seed).fixed.value());
    if (grid.empty()) {
        const Bandwidth base =
            cfg.estimator == EstimatorKind::Tmle1Star
                ? default_bandwidth(csv.data, SmoothingTarget::ScoreValues, &nuisance.g)
                : default_bandwidth(csv.data, SmoothingTarget::Covariates);
        grid = default_candidate_grid(base);
    }
    const CvResult cv = cv_bandwidth(csv.data, nuisance, grid, o.folds, cfg.estimator, cfg, o.seed);

    Canonical c;
    c.add("command", "bandwidth");
    add_estimation_settings(c, o, est);
    c.add("learner", o.learner);
    c.add("grid", join(o.grid));
    std::ostringstream os;
    os << header_line(o.seed, c.hash(), "selected=" + cv.selected.to_string());
    os << "h,rss,variance,bias,criterion,psi,failed\n";
    for (const auto& s : cv.scores) {
        os << s.h.to_string() << ',' << full(s.rss) << ',' << full(s.variance) << ',' << full(s.bias) << ','
           << full(s.criterion) << ',' << full(s.psi_full) << ',' << s.failed << '\n';
    }
    emit(o, out, os.str());
    return 0;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    SimGridConfig sim;
    sim.dgp = dgp_by_name(o.dgp);
    sim.n_list = o.n;
    sim.p_grid = o.p;
    sim.q_grid = o.q;
    sim.replicates = o.reps;
    sim.master_seed = o.seed;
    sim.threads = o.threads;
    sim.kernel = KernelSpec::parse(o.kernel);
    sim.truncation.g_floor = o.trunc_g;
    sim.bandwidth = parse_bandwidth_choice(o.bandwidth, o.folds, o.seed);
    if (o.fluctuation == "covariate") sim.fluctuation = FluctuationMode::Covariate;
    else if (o.fluctuation == "weighted") sim.fluctuation = FluctuationMode::Weighted;
    else throw TmleError("fluctuation must be covariate or weighted");
    if (o.coverage == "mc") sim.coverage = CoverageVariance::MonteCarlo;
    else if (o.coverage == "bound") sim.coverage = CoverageVariance::Bound;
    else throw TmleError("coverage must be mc or bound");
    if (o.perturbation == "fit") sim.perturbation = PerturbationScope::PerFit;
    else if (o.perturbation == "unit") sim.perturbation = PerturbationScope::PerUnit;
    else throw TmleError("perturbation must be fit or unit");
    const std::string est = o.estimator.empty() ? "tmle1,tmle1star,tmle2" : o.estimator;
    sim.estimators.clear();
    for (const auto& e : split(est, ',')) sim.estimators.push_back(parse_estimator(e));

    const GridResult res = run_grid(sim);

    Canonical c;
    c.add("command", "simulate");
    c.add("dgp", sim.dgp.name);
    c.add("n", join(o.n));
    c.add("p", join(o.p));
    c.add("q", join(o.q));
    c.add("reps", std::to_string(o.reps));
    c.add("coverage", o.coverage);
    c.add("perturbation", o.perturbation);
    add_estimation_settings(c, o, est);
    const std::string header =
        header_line(o.seed, c.hash(), "dgp=" + sim.dgp.name + " psi0=" + full(res.psi0) + " bound=" + full(res.bound));

    std::ostringstream csv;
    csv << header;
    write_metrics_csv(csv, res.rows);
    std::ostringstream table;
    table << header;
    write_metrics_table(table, res.rows);

    const std::string csv_path = o.out.empty() ? "metrics.csv" : o.out;
    std::string table_path = o.table;
    if (table_path.empty()) {
        std::filesystem::path p(csv_path);
        p.replace_extension(".txt");
        table_path = p.string();
    }
    write_file_atomic(csv_path, csv.str());
    write_file_atomic(table_path, table.str());
    out << table.str();

    std::size_t flagged = 0;
    for (const auto& r : res.rows) flagged += r.flagged ? 1 : 0;
    if (flagged > 0) {
        out << flagged << " cell(s) exceeded the 2% replicate failure limit\n";
        return 3;
    }
    return 0;
}

int cmd_oracle(const Options& o, std::ostream& out) {
    const std::uint64_t seed = o.seed_given ? o.seed : kOracleSeed;
    std::vector<std::string> names;
    if (o.dgp == "all") names = {"d1", "d3"};
    else names = split(o.dgp, ',');
    std::vector<OracleConstants> constants;
    for (const auto& name : names) {
        constants.push_back(compute_oracle_constants(dgp_by_name(name), o.draws, seed, o.threads));
    }
    Canonical c;
    c.add("command", "oracle");
    c.add("dgp", o.dgp);
    c.add("draws", std::to_string(o.draws));
    c.add("seed", std::to_string(seed));
    std::ostringstream os;
    os << header_line(seed, c.hash());
    write_oracle_constants(os, constants);
    emit(o, out, os.str());
    return 0;
}

bool given_as_flag(const CLI::Option& opt, int argc, const char* const* argv) {
    for (const std::string& name : opt.get_lnames()) {
        const std::string flag = "--" + name;
        for (int i = 1; i < argc; ++i) {
            const std::string_view arg = argv[i];
            if (arg == flag || arg.starts_with(flag + "=")) return true;
        }
    }
    return false;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Second-order targeted estimation of a mean with missing outcomes", "sotmle"};
    app.set_version_flag("--version", version());
    app.set_config("--config", "", "flat key = value settings file");
    app.require_subcommand(1);

    Options o;
    auto env = [](CLI::Option* opt, const char* name) { return opt->envname(std::string("SOTMLE_") + name); };
    env(app.add_option("--estimator", o.estimator, "tmle1, tmle1star, tmle2 or robins2 (comma list for simulate)"),
        "ESTIMATOR");
    env(app.add_option("--kernel", o.kernel, "gaussian, epanechnikov, gaussian4 or discrete")->capture_default_str(),
        "KERNEL");
    env(app.add_option("--bandwidth", o.bandwidth, "default, cv or fixed:<h>")->capture_default_str(), "BANDWIDTH");
    env(app.add_option("--fluctuation", o.fluctuation, "covariate or weighted")->capture_default_str(),
        "FLUCTUATION");
    env(app.add_option("--reps", o.reps, "simulation replicates")->capture_default_str(), "REPS");
    auto* seed_opt = env(app.add_option("--seed", o.seed, "master seed")->capture_default_str(), "SEED");
    env(app.add_option("--out", o.out, "output file (default: stdout; simulate: metrics.csv)"), "OUT");
    env(app.add_option("--table", o.table, "simulate: text table path (default: --out with .txt)"), "TABLE");
    env(app.add_option("--trunc-g", o.trunc_g, "lower truncation of g")->capture_default_str(), "TRUNC_G");
    env(app.add_option("--boot", o.boot, "bootstrap replicates (0: influence-function variance)")
            ->capture_default_str(),
        "BOOT");
    env(app.add_option("--folds", o.folds, "cross-validation folds")->capture_default_str(), "FOLDS");
    env(app.add_option("--threads", o.threads, "worker threads")->capture_default_str(), "THREADS");
    env(app.add_option("--learner", o.learner, "glm or mean")->capture_default_str(), "LEARNER");
    env(app.add_option("--dgp", o.dgp, "d1 or d3 (oracle: also 'all')")->capture_default_str(), "DGP");
    env(app.add_option("--n", o.n, "sample sizes")->delimiter(',')->capture_default_str(), "N");
    env(app.add_option("--p", o.p, "outcome-model perturbation rates")->delimiter(',')->capture_default_str(), "P");
    env(app.add_option("--q", o.q, "missingness-model perturbation rates")->delimiter(',')->capture_default_str(),
        "Q");
    env(app.add_option("--coverage", o.coverage, "mc or bound")->capture_default_str(), "COVERAGE");
    env(app.add_option("--perturbation", o.perturbation, "simulate: perturbation drawn per fit or per unit")
            ->capture_default_str(),
        "PERTURBATION");
    env(app.add_option("--draws", o.draws, "oracle Monte Carlo draws")->capture_default_str(), "DRAWS");
    env(app.add_option("--data", o.data, "data CSV"), "DATA");
    env(app.add_option("--scale", o.scale, "auto or none")->capture_default_str(), "SCALE");
    env(app.add_option("--level", o.level, "confidence level")->capture_default_str(), "LEVEL");
    env(app.add_option("--grid", o.grid, "bandwidth candidates")->delimiter(','), "GRID");

    auto* sim = app.add_subcommand("simulate", "run a simulation grid")->fallthrough();
    auto* est = app.add_subcommand("estimate", "estimate the mean outcome from a data file")->fallthrough();
    est->add_option("data", o.data, "data CSV");
    auto* at = app.add_subcommand("ate", "average treatment effect from a data file with a t column")->fallthrough();
    at->add_option("data", o.data, "data CSV");
    auto* orc = app.add_subcommand("oracle", "regenerate the Monte Carlo oracle constants")->fallthrough();
    auto* bw = app.add_subcommand("bandwidth", "cross-validated bandwidth selection")->fallthrough();
    bw->add_option("data", o.data, "data CSV");

    try {
        app.parse(argc, argv);
        // CLI11 lets a config file beat the environment; flip that so only flags beat env
        for (CLI::Option* opt : app.get_options()) {
            const std::string& name = opt->get_envname();
            const char* value = name.empty() ? nullptr : std::getenv(name.c_str());
            if (value == nullptr || given_as_flag(*opt, argc, argv)) continue;
            opt->clear();
            opt->add_result(std::string(value));
            opt->run_callback();
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    o.seed_given = seed_opt->count() > 0;

    try {
        if (*sim) return cmd_simulate(o, out);
        if (*est) return cmd_estimate(o, out);
        if (*at) return cmd_ate(o, out);
        if (*orc) return cmd_oracle(o, out);
        if (*bw) return cmd_bandwidth(o, out);
    } catch (const std::exception& e) {
        err << "sotmle: error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace sotmle
