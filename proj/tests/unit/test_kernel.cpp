#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "helpers.hpp"
#include "sotmle/kernel.hpp"

using namespace sotmle;

namespace {

// Composite Simpson rule on [lo, hi] with m (even) panels.
template <typename F>
double simpson(F f, double lo, double hi, int m) {
    const double step = (hi - lo) / m;
    double s = f(lo) + f(hi);
    for (int i = 1; i < m; ++i) s += f(lo + i * step) * (i % 2 == 1 ? 4.0 : 2.0);
    return s * step / 3.0;
}

Dataset univariate(const std::vector<double>& w, const std::vector<int>& a) {
    Dataset d(1);
    for (std::size_t i = 0; i < w.size(); ++i) {
        std::optional<double> y;
        if (a[i] == 1) y = 0.5;
        d.add(std::span<const double>(&w[i], 1), a[i], y);
    }
    return d;
}

}  // namespace

TEST_SUITE("kernel") {

TEST_CASE("kernel values") {
    const double zero = 0.0;
    CHECK(kernel_eval({&zero, 1}, {KernelFamily::Gaussian}, 1.0) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
    CHECK(kernel_eval({&zero, 1}, {KernelFamily::Discrete}, 1.0) == 1.0);
    const double off = 1e-9;
    CHECK(kernel_eval({&off, 1}, {KernelFamily::Discrete}, 1.0) == 0.0);
    CHECK_THROWS_AS(kernel_eval({&zero, 1}, {KernelFamily::Gaussian}, Bandwidth(0.0)), TmleError);
    CHECK_THROWS_AS(Bandwidth(-1.0), TmleError);
    const double u[2] = {0.3, -0.2};
    const double h0 = 0.5;
    const double h1 = 2.0;
    const double expected = kernel_1d(0.3 / h0, KernelFamily::Epanechnikov) / h0 *
                            kernel_1d(-0.2 / h1, KernelFamily::Epanechnikov) / h1;
    CHECK(kernel_eval(u, {KernelFamily::Epanechnikov}, Bandwidth(std::vector<double>{h0, h1})) ==
          doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("kernel orders and names") {
    CHECK(KernelSpec{KernelFamily::Gaussian}.order() == 1);
    CHECK(KernelSpec{KernelFamily::Epanechnikov}.order() == 1);
    CHECK(KernelSpec{KernelFamily::GaussianOrder4}.order() == 3);
    for (auto f : {KernelFamily::Gaussian, KernelFamily::Epanechnikov, KernelFamily::GaussianOrder4,
                   KernelFamily::Discrete}) {
        CHECK(KernelSpec::parse(KernelSpec{f}.name()).family == f);
    }
    CHECK_THROWS_AS(KernelSpec::parse("triangular"), TmleError);
}

TEST_CASE("continuous kernels integrate to one") {
    for (auto f : {KernelFamily::Gaussian, KernelFamily::Epanechnikov, KernelFamily::GaussianOrder4}) {
        const double total = simpson([f](double u) { return kernel_1d(u, f); }, -12.0, 12.0, 24000);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("fourth-order kernel has a vanishing second moment") {
    const double m2 = simpson([](double u) { return u * u * kernel_1d(u, KernelFamily::GaussianOrder4); },
                              -12.0, 12.0, 24000);
    CHECK(std::abs(m2) < 1e-6);
    const double m2_gauss =
        simpson([](double u) { return u * u * kernel_1d(u, KernelFamily::Gaussian); }, -12.0, 12.0, 24000);
    CHECK(m2_gauss == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("Nadaraya-Watson examples") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(40);
    for (auto& x : w) x = u(rng);
    const Dataset all_one = univariate(w, std::vector<int>(40, 1));
    for (double h : {0.05, 0.5, 5.0}) {
        const double at = u(rng);
        CHECK(nw_regress_covariates({&at, 1}, all_one, {}, h).value == doctest::Approx(1.0).epsilon(1e-15));
    }
    std::vector<int> a(40);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = i % 3 == 0 ? 0 : 1;
    const Dataset mixed = univariate(w, a);
    const double at = 0.1;
    CHECK(std::abs(nw_regress_covariates({&at, 1}, mixed, {}, 1e9).value - mixed.mean_a()) < 1e-6);

    const Dataset strata = univariate({0.0, 0.0, 1.0, 1.0}, {1, 0, 1, 1});
    const double w0 = 0.0;
    const double w1 = 1.0;
    CHECK(nw_regress_covariates({&w0, 1}, strata, {KernelFamily::Discrete}, 1.0).value == 0.5);
    CHECK(nw_regress_covariates({&w1, 1}, strata, {KernelFamily::Discrete}, 1.0).value == 1.0);
}

TEST_CASE("Nadaraya-Watson falls back to the mean of A without kernel mass") {
    const Dataset strata = univariate({0.0, 0.0, 1.0, 1.0}, {1, 0, 1, 1});
    const double w = 0.5;
    const NwEstimate e = nw_regress_covariates({&w, 1}, strata, {KernelFamily::Discrete}, 1.0);
    CHECK(e.fallback);
    CHECK(e.value == 0.75);
    const NwEstimate far = nw_regress_covariates({&w, 1}, strata, {KernelFamily::Epanechnikov}, 0.1);
    CHECK(far.fallback);
}

TEST_CASE("Nadaraya-Watson on score values") {
    std::mt19937_64 rng(5);
    const Dataset d = testing::random_dataset(rng, 60, 2);
    const Predictor flat = [](std::span<const double>) { return 0.4; };
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(nw_regress_score(d.w(i), flat, d, {}, 0.1).value == doctest::Approx(d.mean_a()).epsilon(1e-14));
    }
    Dataset all(2);
    for (std::size_t i = 0; i < d.size(); ++i) all.add(d.w(i), 1, 0.5);
    const Predictor slope = [](std::span<const double> w) { return expit(w[0] - w[1]); };
    CHECK(nw_regress_score(d.w(3), slope, all, {}, 0.05).value == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("score smoothing with two separated clusters") {
    // ghat(W) is 0.2 on w < 0 and 0.8 otherwise
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Dataset d(1);
    for (int i = 0; i < 80; ++i) {
        const double w = u(rng);
        const int a = u01(rng) < (w < 0 ? 0.3 : 0.7) ? 1 : 0;
        d.add(std::span<const double>(&w, 1), a, a ? std::optional<double>(0.5) : std::nullopt);
    }
    const Predictor ghat = [](std::span<const double> w) { return w[0] < 0 ? 0.2 : 0.8; };
    // brute force: Gaussian weights on |ghat difference| with h = 0.01
    for (std::size_t q = 0; q < 4; ++q) {
        const double gq = ghat(d.w(q));
        double num = 0.0;
        double den = 0.0;
        double cluster_sum = 0.0;
        double cluster_n = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double z = (gq - ghat(d.w(i))) / 0.01;
            const double k = std::exp(-0.5 * z * z);
            num += k * d.a(i);
            den += k;
            if (ghat(d.w(i)) == gq) {
                cluster_sum += d.a(i);
                cluster_n += 1.0;
            }
        }
        const double value = nw_regress_score(d.w(q), ghat, d, {}, 0.01).value;
        CHECK(std::abs(value - cluster_sum / cluster_n) < 1e-6);
        CHECK(value == doctest::Approx(num / den).epsilon(1e-12));
    }
}

TEST_CASE("Nadaraya-Watson outputs stay in the unit interval") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const Dataset d = testing::random_dataset(rng, 150, 2);
    for (int k = 0; k < 1000; ++k) {
        const double w[2] = {u(rng), u(rng)};
        const auto family = k % 3 == 0 ? KernelFamily::Gaussian
                                       : (k % 3 == 1 ? KernelFamily::Epanechnikov : KernelFamily::GaussianOrder4);
        const double v = nw_regress_covariates(w, d, {family}, 0.05 + 0.001 * k).value;
        CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("discrete smoothing equals brute-force stratum means") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> level(0, 3);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int rep = 0; rep < 25; ++rep) {
        Dataset d(2);
        for (int i = 0; i < 60; ++i) {
            const double w[2] = {static_cast<double>(level(rng)), static_cast<double>(level(rng) % 2)};
            const int a = u01(rng) < 0.6 ? 1 : 0;
            d.add(w, a, a ? std::optional<double>(0.3) : std::nullopt);
        }
        std::map<std::pair<double, double>, std::pair<int, int>> groups;
        for (std::size_t i = 0; i < d.size(); ++i) {
            auto& g = groups[{d.w(i)[0], d.w(i)[1]}];
            g.first += d.a(i);
            g.second += 1;
        }
        std::vector<double> pts(d.covariate_matrix().begin(), d.covariate_matrix().end());
        std::vector<double> resp(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) resp[i] = d.a(i);
        const NadarayaWatson nw(pts, 2, resp, {KernelFamily::Discrete}, 1.0);
        const auto at = nw.at_points();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto& g = groups[{d.w(i)[0], d.w(i)[1]}];
            const double mean = static_cast<double>(g.first) / g.second;
            CHECK(nw_regress_covariates(d.w(i), d, {KernelFamily::Discrete}, 1.0).value == mean);
            CHECK(at[i].value == mean);
        }
    }
}

TEST_CASE("pairwise sums match pointwise evaluation") {
    std::mt19937_64 rng(9);
    const Dataset d = testing::random_dataset(rng, 120, 3);
    std::vector<double> pts(d.covariate_matrix().begin(), d.covariate_matrix().end());
    std::vector<double> resp(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) resp[i] = d.a(i);
    const NadarayaWatson nw(pts, 3, resp, {}, Bandwidth(std::vector<double>{0.3, 0.4, 0.5}));
    const auto all = nw.at_points(false);
    const auto loo = nw.at_points(true);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(all[i].value == doctest::Approx(nw(d.w(i)).value).epsilon(1e-12));
        double num = 0.0;
        double den = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            if (j == i) continue;
            double q = 0.0;
            const double hs[3] = {0.3, 0.4, 0.5};
            for (int k = 0; k < 3; ++k) {
                const double z = (d.w(i)[k] - d.w(j)[k]) / hs[k];
                q += z * z;
            }
            num += std::exp(-0.5 * q) * d.a(j);
            den += std::exp(-0.5 * q);
        }
        CHECK(loo[i].value == doctest::Approx(num / den).epsilon(1e-12));
    }
}

TEST_CASE("kernel density estimate") {
    Dataset one(1);
    const double w = 0.7;
    one.add(std::span<const double>(&w, 1), 0, std::nullopt);
    CHECK(kde_density({&w, 1}, one, {}, 1.0) == doctest::Approx(0.3989422804014327).epsilon(1e-15));
    const double far = 100.0;
    CHECK(kde_density({&far, 1}, one, {}, 1.0) == kDensityFloor);

    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Dataset unif(1);
    for (int i = 0; i < 10000; ++i) {
        const double x = u01(rng);
        unif.add(std::span<const double>(&x, 1), 0, std::nullopt);
    }
    for (double at : {0.3, 0.5, 0.7}) {
        CHECK(std::abs(kde_density({&at, 1}, unif, {}, 0.05) - 1.0) < 0.1);
    }
}

TEST_CASE("default bandwidth rule") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::vector<double> x(1000);
    for (auto& v : x) v = norm(rng);
    // standardize so the sample sd is exactly one
    double m = 0.0;
    for (double v : x) m += v;
    m /= 1000.0;
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / 999.0);
    for (auto& v : x) v = (v - m) / sd;
    const Bandwidth h = rule_of_thumb_bandwidth(x, 1);
    CHECK(h[0] == doctest::Approx(std::pow(4.0 / 3.0, 0.2) * std::pow(1000.0, -0.2)).epsilon(1e-12));
    CHECK(h[0] == doctest::Approx(0.266).epsilon(0.002));

    std::vector<double> x2(x);
    for (auto& v : x2) v *= 2.0;
    CHECK(rule_of_thumb_bandwidth(x2, 1)[0] == doctest::Approx(2.0 * h[0]).epsilon(1e-12));

    std::vector<double> x16;
    for (int k = 0; k < 16; ++k) x16.insert(x16.end(), x.begin(), x.end());
    // replication keeps the mean; the n - 1 divisor moves the sd slightly
    const double sd_ratio = std::sqrt(16.0 * 999.0 / 15999.0);
    CHECK(rule_of_thumb_bandwidth(x16, 1)[0] ==
          doctest::Approx(h[0] * std::pow(16.0, -0.2) * sd_ratio).epsilon(1e-12));

    std::vector<double> flat(10, 3.0);
    CHECK_THROWS_WITH_AS(rule_of_thumb_bandwidth(flat, 1), "degenerate covariate", TmleError);
}

TEST_CASE("default bandwidth targets") {
    std::mt19937_64 rng(12);
    const Dataset d = testing::random_dataset(rng, 300, 2);
    const Bandwidth hc = default_bandwidth(d, SmoothingTarget::Covariates);
    CHECK(hc.size() == 2);
    const Predictor g = [](std::span<const double> w) { return expit(w[0]); };
    const Bandwidth hs = default_bandwidth(d, SmoothingTarget::ScoreValues, &g);
    CHECK(hs.size() == 1);
    std::vector<double> scores(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) scores[i] = g(d.w(i));
    CHECK(hs[0] == rule_of_thumb_bandwidth(scores, 1)[0]);
}

TEST_CASE("candidate grid and folds") {
    const auto grid = default_candidate_grid(Bandwidth(0.2));
    REQUIRE(grid.size() == 10);
    CHECK(grid.front()[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(grid.back()[0] == doctest::Approx(0.8).epsilon(1e-12));
    for (std::size_t i = 1; i < grid.size(); ++i) {
        CHECK(grid[i][0] / grid[i - 1][0] == doctest::Approx(std::pow(16.0, 1.0 / 9.0)).epsilon(1e-12));
    }
    const auto f1 = fold_assignment(103, 5, 9);
    CHECK(f1 == fold_assignment(103, 5, 9));
    CHECK(f1 != fold_assignment(103, 5, 10));
    std::vector<int> counts(5, 0);
    for (int f : f1) counts[static_cast<std::size_t>(f)]++;
    for (int c : counts) CHECK((c == 20 || c == 21));
}

}  // TEST_SUITE
