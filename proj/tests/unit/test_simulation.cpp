#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "sotmle/simulation.hpp"

using namespace sotmle;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

template <typename F>
Moments moments_of(std::size_t m, F draw) {
    CompensatedSum s;
    CompensatedSum s2;
    for (std::size_t i = 0; i < m; ++i) {
        const double x = draw();
        s.add(x);
        s2.add(x * x);
    }
    const double mean = s.value() / static_cast<double>(m);
    return {mean, s2.value() / static_cast<double>(m) - mean * mean};
}

// Same process as D1 but with every outcome observed.
Dgp always_observed_d1() {
    Dgp d = dgp_d1();
    d.name = "d1_complete";
    d.g0 = [](std::span<const double>) { return 1.0; };
    d.builtin = false;
    return d;
}

SimGridConfig small_grid() {
    SimGridConfig c;
    c.dgp = dgp_d1();
    c.n_list = {150};
    c.p_grid = {0.5};
    c.q_grid = {0.5, 0.1};
    c.replicates = 4;
    c.master_seed = 17;
    return c;
}

}  // namespace

TEST_SUITE("simulation") {

TEST_CASE("beta draws have the right moments") {
    std::mt19937_64 rng(61);
    const std::size_t m = 200000;
    const double shapes[][2] = {{0.5, 0.5}, {2.0, 2.0}, {0.3, 2.0}, {0.05, 0.05}};
    for (const auto& s : shapes) {
        const double a = s[0];
        const double b = s[1];
        const Moments mo = moments_of(m, [&] {
            const double x = sample_beta(a, b, rng);
            REQUIRE((x > 0.0 && x < 1.0));
            return x;
        });
        const double mean = a / (a + b);
        const double var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
        CHECK(std::abs(mo.mean - mean) < 4.0 * std::sqrt(var / m));
        CHECK(std::abs(mo.var / var - 1.0) < 0.02);
    }
    CHECK_THROWS_AS(sample_beta(0.0, 1.0, rng), TmleError);
}

TEST_CASE("covariate supports") {
    auto rng = make_stream(62, {});
    const Dataset d1 = generate(dgp_d1(), 20000, rng);
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK((d1.w(i)[0] >= -3.0 && d1.w(i)[0] <= 3.0));
    const Dataset d3 = generate(dgp_d3(), 20000, rng);
    for (std::size_t i = 0; i < d3.size(); ++i) {
        for (double x : d3.w(i)) CHECK((x > 0.0 && x < 1.0));
    }
    CHECK(dgp_by_name("D3").name == "d3");
    CHECK_THROWS_AS(dgp_by_name("d2"), TmleError);
}

TEST_CASE("observation rate of the first process") {
    // E expit(1 + 0.7 W) with W = 6 Beta(1/2, 1/2) - 3, by quadrature
    const double truth = 0.6595918032537188;
    auto rng = make_stream(63, {});
    const std::size_t n = 1000000;
    const Dataset d = generate(dgp_d1(), n, rng);
    CHECK(std::abs(d.mean_a() - truth) < 3.0 * std::sqrt(truth * (1.0 - truth) / n));
    for (std::size_t i = 0; i < 1000; ++i) {
        if (d.observed(i)) CHECK((d.y(i) == 0.0 || d.y(i) == 1.0));
    }
}

TEST_CASE("oracle of a constant outcome regression") {
    Dgp d = dgp_d1();
    d.builtin = false;
    d.qbar0 = [](std::span<const double>) { return 0.3; };
    CHECK(oracle_psi0(d, 100000, 5).value == doctest::Approx(0.3).epsilon(1e-14));
}

TEST_CASE("oracle estimates agree across seeds and sizes") {
    const Dgp d = dgp_d1();
    const std::size_t m = 1u << 18;
    const MonteCarloValue a = oracle_psi0(d, m, 1);
    const MonteCarloValue b = oracle_psi0(d, m, 2);
    CHECK(std::abs(a.value - b.value) < 4.0 * std::hypot(a.mc_se, b.mc_se));
    const MonteCarloValue c = oracle_psi0(d, 2 * m, 1);
    CHECK(std::abs(c.mc_se * std::sqrt(2.0) / a.mc_se - 1.0) < 0.2);

    const MonteCarloValue bound = efficiency_bound(d, m, 3);
    const Moments q = moments_of(m, [&, rng = make_stream(64, {})]() mutable {
        std::vector<double> w(1);
        d.draw_w(rng, w);
        return d.qbar0(w);
    });
    CHECK(bound.value >= q.var);
    CHECK(oracle_psi0(d, m, 1, 3).value == a.value);
}

TEST_CASE("bound without missingness is the outcome variance") {
    const Dgp d = always_observed_d1();
    const std::size_t m = 1u << 19;
    const MonteCarloValue psi = oracle_psi0(d, m, 8);
    const MonteCarloValue bound = efficiency_bound(d, m, 9);
    const double bernoulli = psi.value * (1.0 - psi.value);
    CHECK(std::abs(bound.value - bernoulli) < 4.0 * bound.mc_se + 2.0 * psi.mc_se);
}

TEST_CASE("shipped constants match the data file") {
    std::ifstream in(std::string(SOTMLE_SOURCE_DIR) + "/data/oracle_constants.txt");
    REQUIRE(in);
    const auto from_file = read_oracle_constants(in);
    const auto& frozen = frozen_oracle_constants();
    REQUIRE(from_file.size() == frozen.size());
    for (std::size_t k = 0; k < frozen.size(); ++k) {
        CHECK(from_file[k].dgp == frozen[k].dgp);
        CHECK(from_file[k].M == frozen[k].M);
        CHECK(from_file[k].seed == frozen[k].seed);
        CHECK(from_file[k].psi0.value == frozen[k].psi0.value);
        CHECK(from_file[k].psi0.mc_se == frozen[k].psi0.mc_se);
        CHECK(from_file[k].bound.value == frozen[k].bound.value);
        CHECK(from_file[k].bound.mc_se == frozen[k].bound.mc_se);
    }
    std::ostringstream os;
    write_oracle_constants(os, frozen);
    std::istringstream back(os.str());
    const auto round = read_oracle_constants(back);
    CHECK(round[0].psi0.value == frozen[0].psi0.value);
    CHECK(frozen_oracle("d3").has_value());
    CHECK_FALSE(frozen_oracle("d2").has_value());
}

TEST_CASE("shipped constants regenerate bit for bit" * doctest::timeout(600)) {
    for (const auto& frozen : frozen_oracle_constants()) {
        const OracleConstants c = compute_oracle_constants(dgp_by_name(frozen.dgp), frozen.M, frozen.seed);
        CHECK(c.psi0.value == frozen.psi0.value);
        CHECK(c.psi0.mc_se == frozen.psi0.mc_se);
        CHECK(c.bound.value == frozen.bound.value);
        CHECK(c.bound.mc_se == frozen.bound.mc_se);
    }
}

TEST_CASE("sample moments around the truth") {
    for (const char* name : {"d1", "d3"}) {
        const Dgp d = dgp_by_name(name);
        const OracleConstants truth = frozen_oracle(name).value();
        auto rng = make_stream(65, {});
        const std::size_t n = 100000;
        const Dataset data = generate(d, n, rng);
        const double plug = plugin_mean(data, d.qbar0);
        CHECK(std::abs(plug - truth.psi0.value) < 4.0 * std::sqrt(truth.bound.value / n));
        const NuisancePair nu{d.qbar0, d.g0};
        CompensatedSum eif;
        for (std::size_t i = 0; i < n; ++i) eif.add(eif_d1(data[i], nu, truth.psi0.value));
        CHECK(std::abs(eif.value() / n) < 4.0 * std::sqrt(truth.bound.value / n) + 4.0 * truth.psi0.mc_se);
    }
}

TEST_CASE("scoring a cell") {
    const std::vector<std::optional<double>> psi{0.4, 0.6, std::nullopt};
    const MetricsRow r = score_cell(EstimatorKind::Tmle1, 100, 0.5, 0.1, psi, 0.5, 0.02,
                                    CoverageVariance::MonteCarlo, 1.96);
    CHECK(r.sqrt_n_abs_bias == doctest::Approx(0.0).epsilon(1e-12));
    // n sd^2 / bound with sd^2 = 0.02
    CHECK(r.rvar == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.coverage == 1.0);
    CHECK(r.failures == 1);
    CHECK(r.replicates == 2);
    CHECK(r.flagged);

    const MetricsRow b = score_cell(EstimatorKind::Tmle2, 100, 0.5, 0.1, {0.45, 0.7}, 0.5, 0.04,
                                    CoverageVariance::Bound, 1.96);
    // half-width 1.96 * 0.02 = 0.0392; both estimates fall outside
    CHECK(b.coverage == 0.0);
    CHECK(b.sqrt_n_abs_bias == doctest::Approx(10.0 * 0.075).epsilon(1e-12));
    CHECK_FALSE(b.flagged);

    const MetricsRow none = score_cell(EstimatorKind::Tmle2, 100, 0.5, 0.1, {0.45}, 0.5, 0.04,
                                       CoverageVariance::Bound, 1.96);
    CHECK(std::isnan(none.rvar));
    CHECK(none.flagged);

    std::vector<std::optional<double>> many;
    for (int k = 0; k < 200; ++k) many.push_back(k == 0 ? 50.0 : 0.5 + 0.001 * (k % 7));
    const MetricsRow t = score_cell(EstimatorKind::Tmle1, 100, 0.5, 0.5, many, 0.5, 0.01,
                                    CoverageVariance::MonteCarlo, 1.96);
    CHECK(t.rvar_trimmed < 1e-2 * t.rvar);
}

TEST_CASE("a small grid runs and is reproducible") {
    const SimGridConfig c = small_grid();
    const GridResult a = run_grid(c);
    REQUIRE(a.rows.size() == 2 * 3);
    CHECK(a.psi0 == frozen_oracle("d1")->psi0.value);
    CHECK(a.rows[0].n == 150);
    CHECK(a.rows[0].q == 0.5);
    CHECK(a.rows[3].q == 0.1);
    for (const auto& cell : a.cells) {
        CHECK(cell.psi.size() == 4);
        for (const auto& v : cell.psi) {
            REQUIRE(v.has_value());
            CHECK((*v > 0.0 && *v < 1.0));
        }
    }
    SimGridConfig threaded = c;
    threaded.threads = 3;
    const GridResult b = run_grid(threaded);
    std::ostringstream sa;
    std::ostringstream sb;
    write_metrics_csv(sa, a.rows);
    write_metrics_csv(sb, b.rows);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("estimator,n,p,q,sqrt_n_abs_bias,rvar,coverage,coverage_mc_se,failures\n", 0) == 0);

    // same datasets, different g perturbation
    CHECK(a.cells[0].psi != a.cells[3].psi);

    std::ostringstream table;
    write_metrics_table(table, a.rows);
    CHECK(table.str().find("rVar (1% trimmed)") != std::string::npos);
}

TEST_CASE("grid configuration errors") {
    SimGridConfig c = small_grid();
    c.replicates = 1;
    CHECK_THROWS_AS(run_grid(c), TmleError);
    c = small_grid();
    c.p_grid = {-0.1};
    CHECK_THROWS_AS(run_grid(c), TmleError);
    c = small_grid();
    c.dgp = always_observed_d1();
    CHECK_THROWS_AS(run_grid(c), TmleError);  // no truth known for a custom process
    c.psi0 = 0.35;
    c.bound = 0.2;
    CHECK_NOTHROW(run_grid(c));
}

TEST_CASE("estimates near the truth at a large sample size") {
    SimGridConfig c;
    c.dgp = dgp_d1();
    c.n_list = {10000};
    c.p_grid = {2.0};
    c.q_grid = {2.0};
    c.replicates = 2;
    c.estimators = {EstimatorKind::Tmle1};
    c.master_seed = 3;
    const GridResult r = run_grid(c);
    const double bound = frozen_oracle("d1")->bound.value;
    for (const auto& v : r.cells[0].psi) {
        CHECK(std::abs(*v - r.psi0) < 5.0 * std::sqrt(bound / 10000.0));
    }
}

}  // TEST_SUITE
