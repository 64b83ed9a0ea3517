#include "sotmle/simulation.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <tuple>

#include "internal.hpp"
#include "sotmle/parallel.hpp"

namespace sotmle {

namespace {

// Stream tags keep the data, perturbation and oracle streams disjoint.
enum StreamTag : std::uint64_t {
    kTagData = 0x44415441,
    kTagPerturbQ = 0x50455251,
    kTagPerturbG = 0x50455247,
    kTagPsi0 = 0x50534930,
    kTagBound = 0x424f554e,
};

// log of a Gamma(shape, 1) draw; shapes below one use G(a) = G(a + 1) U^(1/a).
double log_gamma_draw(double shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (shape >= 1.0) {
        std::gamma_distribution<double> gamma(shape, 1.0);
        double x = 0.0;
        while (!(x > 0.0)) x = gamma(rng);
        return std::log(x);
    }
    std::gamma_distribution<double> gamma(shape + 1.0, 1.0);
    double x = 0.0;
    while (!(x > 0.0)) x = gamma(rng);
    double u = 0.0;
    while (!(u > 0.0)) u = unif(rng);
    return std::log(x) + std::log(u) / shape;
}

double open_unit(double x) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(x, lo, hi);
}

std::uint64_t bits(double x) { return std::bit_cast<std::uint64_t>(x); }

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

double sample_beta(double a, double b, std::mt19937_64& rng) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b)) {
        throw TmleError("beta shapes must be positive and finite");
    }
    const double lx = log_gamma_draw(a, rng);
    const double ly = log_gamma_draw(b, rng);
    // x / (x + y) = expit(log x - log y)
    return open_unit(expit(lx - ly));
}

Dgp dgp_d1() {
    Dgp d;
    d.name = "d1";
    d.dim = 1;
    d.draw_w = [](std::mt19937_64& rng, std::span<double> w) { w[0] = 6.0 * sample_beta(0.5, 0.5, rng) - 3.0; };
    d.g0 = [](std::span<const double> w) { return expit(1.0 + 0.7 * w[0]); };
    d.qbar0 = [](std::span<const double> w) { return expit(-3.0 + 0.5 * std::exp(w[0]) + 0.5 * w[0]); };
    d.qbar_design = {DesignTerm::intercept(), DesignTerm::exp_of(0), DesignTerm::identity(0)};
    d.g_design = main_terms_design(1);
    d.builtin = true;
    return d;
}

Dgp dgp_d3() {
    Dgp d;
    d.name = "d3";
    d.dim = 3;
    d.draw_w = [](std::mt19937_64& rng, std::span<double> w) {
        w[0] = sample_beta(2.0, 2.0, rng);
        w[1] = sample_beta(2.0 * w[0], 2.0, rng);
        w[2] = sample_beta(2.0 * w[0], 2.0 * w[1], rng);
    };
    d.g0 = [](std::span<const double> w) { return expit(1.0 + 0.12 * w[0] + 0.1 * w[1] + 0.5 * w[2]); };
    d.qbar0 = [](std::span<const double> w) {
        return expit(-4.0 + 0.2 * w[0] + 0.3 * w[1] + 0.5 * std::exp(w[2]));
    };
    d.qbar_design = {DesignTerm::intercept(), DesignTerm::identity(0), DesignTerm::identity(1),
                     DesignTerm::exp_of(2)};
    d.g_design = main_terms_design(3);
    d.builtin = true;
    return d;
}

Dgp dgp_by_name(const std::string& name) {
    const std::string n = lower(name);
    if (n == "d1") return dgp_d1();
    if (n == "d3") return dgp_d3();
    throw TmleError("unknown data-generating process '" + name + "' (expected d1 or d3)");
}

namespace {

int draw_indicator(double prob, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(rng) < prob ? 1 : 0;
}

double draw_outcome(const Dgp& dgp, std::span<const double> w, std::mt19937_64& rng) {
    if (dgp.draw_y) return dgp.draw_y(w, rng);
    return static_cast<double>(draw_indicator(dgp.qbar0(w), rng));
}

}  // namespace

Dataset generate(const Dgp& dgp, std::size_t n, std::mt19937_64& rng) {
    if (n < 1) throw TmleError("sample size must be at least 1");
    Dataset data(dgp.dim);
    std::vector<double> w(dgp.dim);
    for (std::size_t i = 0; i < n; ++i) {
        dgp.draw_w(rng, w);
        const int a = draw_indicator(dgp.g0(w), rng);
        std::optional<double> y;
        if (a == 1) y = draw_outcome(dgp, w, rng);
        data.add(w, a, y);
    }
    return data;
}

namespace {

struct Moments {
    CompensatedSum s1;
    CompensatedSum s2;
    CompensatedSum s4;
    void add(double x) {
        s1.add(x);
        s2.add(x * x);
        s4.add(x * x * x * x);
    }
};

template <typename Draw>
std::vector<Moments> chunked(std::size_t M, std::uint64_t seed, std::uint64_t tag, unsigned threads,
                             Draw draw) {
    const std::size_t chunks = (M + kOracleChunk - 1) / kOracleChunk;
    std::vector<Moments> out(chunks);
    parallel_for(chunks, threads, [&](std::size_t c) {
        auto rng = make_stream(seed, {tag, c});
        const std::size_t begin = c * kOracleChunk;
        const std::size_t end = std::min(M, begin + kOracleChunk);
        for (std::size_t i = begin; i < end; ++i) out[c].add(draw(rng));
    });
    return out;
}

// Combines chunk moments into the sample mean and its standard error.
MonteCarloValue mean_of(const std::vector<Moments>& parts, std::size_t M) {
    CompensatedSum s1;
    CompensatedSum s2;
    for (const auto& p : parts) {
        s1.add(p.s1.value());
        s2.add(p.s2.value());
    }
    const double m = static_cast<double>(M);
    const double mean = s1.value() / m;
    const double var = std::max(0.0, (s2.value() - m * mean * mean) / (m - 1.0));
    return {mean, std::sqrt(var / m)};
}

// Sample variance, with the delta-method standard error sqrt((mu4 - sigma^4) / M).
MonteCarloValue variance_of(const std::vector<Moments>& parts, std::size_t M) {
    CompensatedSum s1;
    CompensatedSum s2;
    CompensatedSum s4;
    for (const auto& p : parts) {
        s1.add(p.s1.value());
        s2.add(p.s2.value());
        s4.add(p.s4.value());
    }
    const double m = static_cast<double>(M);
    const double mean = s1.value() / m;
    const double var = std::max(0.0, (s2.value() - m * mean * mean) / (m - 1.0));
    const double mu4 = s4.value() / m;
    return {var, std::sqrt(std::max(0.0, mu4 - var * var) / m)};
}

void check_draws(std::size_t M) {
    if (M < 2) throw TmleError("Monte Carlo size must be at least 2");
}

std::mutex memo_mutex;
std::map<std::tuple<std::string, std::size_t, std::uint64_t, int>, MonteCarloValue> memo;

}  // namespace

MonteCarloValue oracle_psi0(const Dgp& dgp, std::size_t M, std::uint64_t seed, unsigned threads) {
    check_draws(M);
    const auto key = std::make_tuple(dgp.name, M, seed, 0);
    if (dgp.builtin) {
        std::lock_guard lock(memo_mutex);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
    }
    const auto parts = chunked(M, seed, kTagPsi0, threads, [&dgp](std::mt19937_64& rng) {
        std::vector<double> x(dgp.dim);
        dgp.draw_w(rng, x);
        return dgp.qbar0(x);
    });
    const MonteCarloValue v = mean_of(parts, M);
    if (dgp.builtin) {
        std::lock_guard lock(memo_mutex);
        memo[key] = v;
    }
    return v;
}

MonteCarloValue efficiency_bound(const Dgp& dgp, std::size_t M, std::uint64_t seed, unsigned threads) {
    check_draws(M);
    const auto key = std::make_tuple(dgp.name, M, seed, 1);
    if (dgp.builtin) {
        std::lock_guard lock(memo_mutex);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
    }
    // eif_d1 with psi = 0; the variance is unaffected by the centring constant
    const auto parts = chunked(M, seed, kTagBound, threads, [&dgp](std::mt19937_64& rng) {
        std::vector<double> x(dgp.dim);
        dgp.draw_w(rng, x);
        const double g = dgp.g0(x);
        const double q = dgp.qbar0(x);
        const int a = draw_indicator(g, rng);
        const double y = a == 1 ? draw_outcome(dgp, x, rng) : 0.0;
        return eif_d1(a, y, q, g, 0.0);
    });
    const MonteCarloValue v = variance_of(parts, M);
    if (dgp.builtin) {
        std::lock_guard lock(memo_mutex);
        memo[key] = v;
    }
    return v;
}

OracleConstants compute_oracle_constants(const Dgp& dgp, std::size_t M, std::uint64_t seed,
                                         unsigned threads) {
    return {dgp.name, M, seed, oracle_psi0(dgp, M, seed, threads), efficiency_bound(dgp, M, seed, threads)};
}

std::optional<OracleConstants> frozen_oracle(const std::string& dgp) {
    const std::string name = lower(dgp);
    for (const auto& c : frozen_oracle_constants()) {
        if (c.dgp == name) return c;
    }
    return std::nullopt;
}

namespace {

std::string full(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string short6(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

}  // namespace

void write_oracle_constants(std::ostream& out, const std::vector<OracleConstants>& constants) {
    out << "dgp,M,seed,psi0,psi0_mc_se,bound,bound_mc_se\n";
    for (const auto& c : constants) {
        out << c.dgp << ',' << c.M << ',' << c.seed << ',' << full(c.psi0.value) << ','
            << full(c.psi0.mc_se) << ',' << full(c.bound.value) << ',' << full(c.bound.mc_se) << '\n';
    }
}

std::vector<OracleConstants> read_oracle_constants(std::istream& in) {
    std::vector<OracleConstants> out;
    std::string line;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7) {
            throw TmleError("oracle constants line " + std::to_string(lineno) + ": expected 7 fields");
        }
        try {
            out.push_back({f[0], std::stoull(f[1]), std::stoull(f[2]), {std::stod(f[3]), std::stod(f[4])},
                           {std::stod(f[5]), std::stod(f[6])}});
        } catch (const std::logic_error&) {
            throw TmleError("oracle constants line " + std::to_string(lineno) + ": bad number");
        }
    }
    return out;
}

void SimGridConfig::validate() const {
    if (replicates < 2) throw TmleError("need at least 2 replicates");
    if (n_list.empty() || p_grid.empty() || q_grid.empty()) throw TmleError("empty simulation grid");
    if (estimators.empty()) throw TmleError("no estimators requested");
    for (std::size_t n : n_list) {
        if (n < 2) throw TmleError("sample sizes must be at least 2");
    }
    for (double r : p_grid) {
        if (!(r >= 0.0)) throw TmleError("perturbation rates must be nonnegative");
    }
    for (double r : q_grid) {
        if (!(r >= 0.0)) throw TmleError("perturbation rates must be nonnegative");
    }
    if (!dgp.draw_w || !dgp.g0 || !dgp.qbar0) throw TmleError("incomplete data-generating process");
}

MetricsRow score_cell(EstimatorKind estimator, std::size_t n, double p, double q,
                      const std::vector<std::optional<double>>& psi, double psi0, double bound,
                      CoverageVariance coverage, double z) {
    MetricsRow row;
    row.estimator = estimator;
    row.n = n;
    row.p = p;
    row.q = q;
    std::vector<double> ok;
    for (const auto& v : psi) {
        if (v) ok.push_back(*v);
        else ++row.failures;
    }
    row.replicates = ok.size();
    row.flagged = row.failures * 50 > psi.size();
    const double nn = static_cast<double>(n);
    if (ok.size() < 2) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.sqrt_n_abs_bias = row.rvar = row.rvar_trimmed = row.coverage = row.coverage_mc_se = nan;
        row.flagged = true;
        return row;
    }
    const double mean = compensated_mean(ok);
    const double sd = detail::sample_sd(ok);
    row.sqrt_n_abs_bias = std::sqrt(nn) * std::abs(mean - psi0);
    row.rvar = nn * sd * sd / bound;

    std::vector<double> sorted = ok;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t cut = sorted.size() / 100;
    const std::span<const double> kept(sorted.data() + cut, sorted.size() - 2 * cut);
    const double sd_trim = detail::sample_sd(kept);
    row.rvar_trimmed = nn * sd_trim * sd_trim / bound;

    const double scale = coverage == CoverageVariance::MonteCarlo ? sd : std::sqrt(bound / nn);
    std::size_t hit = 0;
    for (double v : ok) {
        if (std::abs(v - psi0) <= z * scale) ++hit;
    }
    const double m = static_cast<double>(ok.size());
    row.coverage = static_cast<double>(hit) / m;
    row.coverage_mc_se = std::sqrt(row.coverage * (1.0 - row.coverage) / m);
    return row;
}

GridResult run_grid(const SimGridConfig& config) {
    config.validate();
    GridResult result;
    const auto frozen = config.dgp.builtin ? frozen_oracle(config.dgp.name) : std::nullopt;
    if (config.psi0) result.psi0 = *config.psi0;
    else if (frozen) result.psi0 = frozen->psi0.value;
    else throw TmleError("no oracle value of psi0 for '" + config.dgp.name + "'");
    if (config.bound) result.bound = *config.bound;
    else if (frozen) result.bound = frozen->bound.value;
    else throw TmleError("no efficiency bound for '" + config.dgp.name + "'");

    const std::size_t nn = config.n_list.size();
    const std::size_t np = config.p_grid.size();
    const std::size_t nq = config.q_grid.size();
    const std::size_t ne = config.estimators.size();
    const auto reps = static_cast<std::size_t>(config.replicates);
    auto cell_index = [&](std::size_t in, std::size_t ip, std::size_t iq, std::size_t ie) {
        return ((in * np + ip) * nq + iq) * ne + ie;
    };
    result.cells.reserve(nn * np * nq * ne);
    for (std::size_t in = 0; in < nn; ++in)
        for (std::size_t ip = 0; ip < np; ++ip)
            for (std::size_t iq = 0; iq < nq; ++iq)
                for (std::size_t ie = 0; ie < ne; ++ie)
                    result.cells.push_back({config.estimators[ie], config.n_list[in], config.p_grid[ip],
                                            config.q_grid[iq], std::vector<std::optional<double>>(reps)});

    EstimatorConfig base;
    base.kernel = config.kernel;
    base.bandwidth = config.bandwidth;
    base.fluctuation = config.fluctuation;
    base.truncation = config.truncation;

    const Dgp& dgp = config.dgp;
    // one unit = one dataset (n, r), shared by every (p, q) cell and estimator
    parallel_for(nn * reps, config.threads, [&](std::size_t unit) {
        const std::size_t in = unit / reps;
        const std::size_t r = unit % reps;
        const std::size_t n = config.n_list[in];
        auto data_rng = make_stream(config.master_seed, {kTagData, n, r});
        const Dataset data = generate(dgp, n, data_rng);
        std::optional<LogisticFit> qfit;
        std::optional<LogisticFit> gfit;
        try {
            qfit = fit_logistic(data, {dgp.qbar_design, LearnerTarget::OutcomeGivenObserved});
            gfit = fit_logistic(data, {dgp.g_design, LearnerTarget::Missingness});
        } catch (const TmleError&) {
            return;  // every cell of this replicate stays empty
        }
        std::vector<PerturbedPredictor> qpert;
        std::vector<PerturbedPredictor> gpert;
        for (double p : config.p_grid) {
            auto rng = make_stream(config.master_seed, {kTagPerturbQ, n, r, bits(p)});
            qpert.push_back(perturb(*qfit, p, n, rng, config.perturbation));
        }
        for (double q : config.q_grid) {
            auto rng = make_stream(config.master_seed, {kTagPerturbG, n, r, bits(q)});
            gpert.push_back(perturb(*gfit, q, n, rng, config.perturbation));
        }
        for (std::size_t ip = 0; ip < np; ++ip) {
            for (std::size_t iq = 0; iq < nq; ++iq) {
                const NuisancePair nuisance{qpert[ip].predictor(), gpert[iq].predictor()};
                for (std::size_t ie = 0; ie < ne; ++ie) {
                    EstimatorConfig cfg = base;
                    cfg.estimator = config.estimators[ie];
                    try {
                        const double psi = estimate(data, nuisance, cfg).psi;
                        if (std::isfinite(psi)) result.cells[cell_index(in, ip, iq, ie)].psi[r] = psi;
                    } catch (const TmleError&) {
                    }
                }
            }
        }
    });

    result.rows.reserve(result.cells.size());
    for (const auto& cell : result.cells) {
        result.rows.push_back(score_cell(cell.estimator, cell.n, cell.p, cell.q, cell.psi, result.psi0,
                                         result.bound, config.coverage, config.z));
    }
    return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
    out << "estimator,n,p,q,sqrt_n_abs_bias,rvar,coverage,coverage_mc_se,failures\n";
    for (const auto& r : rows) {
        out << to_string(r.estimator) << ',' << r.n << ',' << full(r.p) << ',' << full(r.q) << ','
            << full(r.sqrt_n_abs_bias) << ',' << full(r.rvar) << ',' << full(r.coverage) << ','
            << full(r.coverage_mc_se) << ',' << r.failures << '\n';
    }
}

void write_metrics_table(std::ostream& out, const std::vector<MetricsRow>& rows) {
    std::vector<EstimatorKind> ests;
    std::vector<std::size_t> ns;
    std::vector<std::pair<double, double>> pqs;
    for (const auto& r : rows) {
        if (std::find(ests.begin(), ests.end(), r.estimator) == ests.end()) ests.push_back(r.estimator);
        if (std::find(ns.begin(), ns.end(), r.n) == ns.end()) ns.push_back(r.n);
        const std::pair<double, double> pq{r.p, r.q};
        if (std::find(pqs.begin(), pqs.end(), pq) == pqs.end()) pqs.push_back(pq);
    }
    auto find = [&](EstimatorKind e, std::size_t n, std::pair<double, double> pq) -> const MetricsRow* {
        for (const auto& r : rows) {
            if (r.estimator == e && r.n == n && r.p == pq.first && r.q == pq.second) return &r;
        }
        return nullptr;
    };
    auto pad = [](const std::string& s, std::size_t width) {
        return s.size() >= width ? s + " " : std::string(width - s.size(), ' ') + s;
    };
    constexpr std::size_t kWidth = 11;

    std::string head = pad("p", 8) + pad("q", 8);
    std::string sub = std::string(16, ' ');
    for (auto e : ests) {
        for (std::size_t k = 0; k < ns.size(); ++k) {
            head += pad(k == 0 ? to_string(e) : "", kWidth);
            sub += pad("n=" + std::to_string(ns[k]), kWidth);
        }
    }
    struct Block {
        const char* title;
        double MetricsRow::*field;
    };
    const Block blocks[] = {{"sqrt(n)|bias|", &MetricsRow::sqrt_n_abs_bias},
                            {"rVar", &MetricsRow::rvar},
                            {"rVar (1% trimmed)", &MetricsRow::rvar_trimmed},
                            {"coverage", &MetricsRow::coverage}};
    for (const auto& b : blocks) {
        out << b.title << '\n' << head << '\n' << sub << '\n';
        for (const auto& pq : pqs) {
            out << pad(short6(pq.first), 8) << pad(short6(pq.second), 8);
            for (auto e : ests) {
                for (std::size_t n : ns) {
                    const MetricsRow* r = find(e, n, pq);
                    std::string cell = r ? short6(r->*(b.field)) : "-";
                    if (r && r->flagged) cell += "*";
                    out << pad(cell, kWidth);
                }
            }
            out << '\n';
        }
        out << '\n';
    }
    bool any_flag = false;
    for (const auto& r : rows) any_flag = any_flag || r.flagged;
    if (any_flag) out << "* more than 2% of replicates failed in this cell\n";
}

}  // namespace sotmle
