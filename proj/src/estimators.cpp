#include "sotmle/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <boost/math/distributions/normal.hpp>

#include "sotmle/bandwidth_selection.hpp"

namespace sotmle {

std::string to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::Tmle1:
            return "tmle1";
        case EstimatorKind::Tmle1Star:
            return "tmle1star";
        case EstimatorKind::Tmle2:
            return "tmle2";
        case EstimatorKind::Robins2:
            return "robins2";
    }
    return "unknown";
}

EstimatorKind parse_estimator(std::string_view name) {
    if (name == "tmle1") return EstimatorKind::Tmle1;
    if (name == "tmle1star") return EstimatorKind::Tmle1Star;
    if (name == "tmle2") return EstimatorKind::Tmle2;
    if (name == "robins2") return EstimatorKind::Robins2;
    throw TmleError("unknown estimator '" + std::string(name) + "'");
}

void EstimatorConfig::validate() const {
    if (!(ci_level > 0.0 && ci_level < 1.0)) {
        throw TmleError("confidence level must lie in (0, 1)");
    }
    if (!(truncation.g_floor > 0.0 && truncation.g_floor < 1.0)) {
        throw TmleError("g truncation must lie in (0, 1)");
    }
    if (!(truncation.q_floor > 0.0)) {
        throw TmleError("density floor must be positive");
    }
    if (bandwidth.rule == BandwidthChoice::Rule::Fixed && !bandwidth.fixed) {
        throw TmleError("fixed bandwidth rule without a value");
    }
    if (variance.mode == VarianceMode::Bootstrap && variance.bootstrap_reps < 100) {
        throw TmleError("bootstrap needs at least 100 replicates");
    }
    if (variance.mode == VarianceMode::Known && !(variance.known_variance >= 0.0)) {
        throw TmleError("known variance must be nonnegative");
    }
    if (fluctuation == FluctuationMode::Weighted && estimator != EstimatorKind::Tmle1 &&
        estimator != EstimatorKind::Robins2) {
        throw TmleError("weighted fluctuation is only defined for a single clever covariate");
    }
}

double normal_critical_value(double level) {
    boost::math::normal_distribution<double> std_normal;
    return boost::math::quantile(std_normal, 1.0 - (1.0 - level) / 2.0);
}

namespace {

std::optional<Bandwidth> resolve_impl(const Dataset& data, const NuisancePair& nuisance,
                                      EstimatorKind kind, const EstimatorConfig& config,
                                      std::vector<std::string>* warnings) {
    if (kind == EstimatorKind::Tmle1) {
        return std::nullopt;
    }
    const auto& choice = config.bandwidth;
    if (choice.rule == BandwidthChoice::Rule::Fixed) {
        return choice.fixed.value();
    }
    const NuisancePair nt = truncated(nuisance, config.truncation);
    Bandwidth base;
    if (kind == EstimatorKind::Tmle1Star) {
        try {
            base = default_bandwidth(data, SmoothingTarget::ScoreValues, &nt.g);
        } catch (const TmleError&) {
            // constant score: every kernel distance is zero and any bandwidth gives mean(A)
            if (warnings) warnings->push_back("score values are constant; bandwidth set to 1");
            return Bandwidth(1.0);
        }
    } else {
        base = default_bandwidth(data, SmoothingTarget::Covariates);
    }
    if (choice.rule == BandwidthChoice::Rule::Default) {
        return base;
    }
    if (kind == EstimatorKind::Robins2) {
        throw TmleError("cross-validated bandwidth is available for tmle1star and tmle2 only");
    }
    const std::vector<Bandwidth> grid =
        choice.grid.empty() ? default_candidate_grid(base) : choice.grid;
    return cv_bandwidth(data, nuisance, grid, choice.folds, kind, config, choice.seed).selected;
}

void fill_interval(EstimateReport& r, double level) {
    const double z = normal_critical_value(level);
    r.ci_lower = r.psi - z * r.se;
    r.ci_upper = r.psi + z * r.se;
}

// Variance and interval for a finished point estimate.
void attach_variance(EstimateReport& report, const Dataset& data, const NuisancePair& nuisance,
                     const EstimatorConfig& config, const std::function<double()>& influence_var) {
    switch (config.variance.mode) {
        case VarianceMode::Influence:
            report.se = std::sqrt(influence_var());
            fill_interval(report, config.ci_level);
            return;
        case VarianceMode::Known:
            report.se = std::sqrt(config.variance.known_variance);
            fill_interval(report, config.ci_level);
            return;
        case VarianceMode::Bootstrap: {
            EstimatorConfig inner = config;
            inner.variance.mode = VarianceMode::Influence;
            const Pipeline pipeline = [&nuisance, inner](const Dataset& d) {
                return estimate(d, nuisance, inner).psi;
            };
            const BootstrapResult boot =
                bootstrap_se(data, pipeline, config.variance.bootstrap_reps, config.variance.seed,
                             config.ci_level, config.variance.threads);
            report.se = boot.se;
            report.ci_lower = boot.ci_lower;
            report.ci_upper = boot.ci_upper;
            report.bootstrap_failures = boot.failures;
            report.warnings.push_back("bootstrap holds the supplied nuisances fixed");
            return;
        }
    }
}

EstimateReport substitution_estimate(const Dataset& data, const NuisancePair& nuisance,
                                     EstimatorKind kind, EstimatorConfig config) {
    config.estimator = kind;
    config.validate();
    data.require_estimable();
    EstimateReport report;
    report.estimator = kind;
    report.kernel = config.kernel;
    const auto h = resolve_impl(data, nuisance, kind, config, &report.warnings);
    const TargetedFit fit = targeted_fit(data, nuisance, kind, config, h);
    report.psi = fit.psi;
    report.epsilon = fit.fluctuation.epsilon;
    report.score_residuals = fit.fluctuation.score_residuals;
    report.bandwidth_used = fit.bandwidth;
    report.positivity_flag = fit.positivity_flag;
    report.degraded = fit.fluctuation.degraded;
    report.kernel_fallbacks = fit.kernel_fallbacks;
    if (fit.positivity_flag) {
        report.warnings.push_back("estimated missingness score below truncation floor");
    }
    if (fit.fluctuation.degraded) {
        report.warnings.push_back("second clever covariate collinear with the first; dropped");
    }
    if (fit.kernel_fallbacks > 0) {
        report.warnings.push_back(std::to_string(fit.kernel_fallbacks) +
                                  " kernel evaluations had no mass; used mean(A)");
    }
    attach_variance(report, data, nuisance, config, [&] {
        return influence_variance(data, fit.qbar_star_values, fit.g_values, report.psi);
    });
    return report;
}

}  // namespace

std::optional<Bandwidth> resolve_bandwidth(const Dataset& data, const NuisancePair& nuisance,
                                           EstimatorKind kind, const EstimatorConfig& config) {
    return resolve_impl(data, nuisance, kind, config, nullptr);
}

TargetedFit targeted_fit(const Dataset& data, const NuisancePair& nuisance, EstimatorKind kind,
                         const EstimatorConfig& config, const std::optional<Bandwidth>& h) {
    if (kind == EstimatorKind::Robins2) {
        throw TmleError("the one-step estimator has no targeting step");
    }
    data.require_estimable();
    const std::size_t n = data.size();
    const Truncation trunc = config.truncation;
    const NuisancePair nt = truncated(nuisance, trunc);

    TargetedFit fit;
    std::vector<double> offsets(n);
    fit.g_values.resize(n);
    fit.h1_values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto w = data.w(i);
        const double raw_g = nuisance.g(w);
        if (raw_g < trunc.g_floor) fit.positivity_flag = true;
        fit.g_values[i] = trunc.clamp_g(raw_g);
        fit.h1_values[i] = 1.0 / fit.g_values[i];
        offsets[i] = logit(Truncation::clamp_qbar(nuisance.qbar(w)));
    }

    // smoother of A used by the second clever covariate
    std::shared_ptr<const NadarayaWatson> smoother;
    if (kind != EstimatorKind::Tmle1) {
        if (!h) {
            throw TmleError("bandwidth required for " + to_string(kind));
        }
        std::vector<double> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = data.a(i);
        if (kind == EstimatorKind::Tmle2) {
            auto cloud = data.covariate_matrix();
            smoother = std::make_shared<NadarayaWatson>(std::vector<double>(cloud.begin(), cloud.end()),
                                                        data.dim(), std::move(a), config.kernel, *h);
        } else {
            if (h->size() != 1) throw TmleError("score smoothing takes a scalar bandwidth");
            smoother = std::make_shared<NadarayaWatson>(fit.g_values, 1, std::move(a),
                                                        config.kernel, *h);
        }
        fit.bandwidth = h;
        const auto smoothed = smoother->at_points(config.leave_one_out);
        fit.h2_values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (smoothed[i].fallback) ++fit.kernel_fallbacks;
            const double g = fit.g_values[i];
            fit.h2_values[i] = (1.0 - smoothed[i].value / g) / g;
        }
    }

    const bool weighted = config.fluctuation == FluctuationMode::Weighted;
    if (weighted && kind != EstimatorKind::Tmle1) {
        throw TmleError("weighted fluctuation is only defined for a single clever covariate");
    }
    FluctuationProblem problem;
    problem.mode = config.fluctuation;
    problem.covariates.resize(kind == EstimatorKind::Tmle1 ? 1 : 2);
    for (std::size_t i = 0; i < n; ++i) {
        if (!data.observed(i)) continue;
        problem.offsets.push_back(offsets[i]);
        problem.outcomes.push_back(data.y(i));
        problem.covariates[0].push_back(fit.h1_values[i]);
        if (!fit.h2_values.empty()) problem.covariates[1].push_back(fit.h2_values[i]);
    }
    fit.fluctuation = fit_fluctuation(problem, config.tol, config.max_iter);
    const std::vector<double>& eps = fit.fluctuation.epsilon;

    fit.qbar_star_values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double eta = offsets[i];
        if (weighted) {
            eta += eps[0];
        } else {
            eta += eps[0] * fit.h1_values[i];
            if (eps.size() > 1) eta += eps[1] * fit.h2_values[i];
        }
        fit.qbar_star_values[i] = expit(eta);
    }
    fit.psi = compensated_mean(fit.qbar_star_values);

    CovariateMap clever;
    if (weighted) {
        clever = [](std::span<const double>) { return std::vector<double>{1.0}; };
    } else if (kind == EstimatorKind::Tmle1) {
        clever = [g = nt.g](std::span<const double> w) { return std::vector<double>{1.0 / g(w)}; };
    } else {
        const bool by_score = kind == EstimatorKind::Tmle1Star;
        clever = [g = nt.g, smoother, by_score](std::span<const double> w) {
            const double gw = g(w);
            const NwEstimate gh = by_score ? (*smoother)(std::span<const double>(&gw, 1)) : (*smoother)(w);
            return std::vector<double>{1.0 / gw, (1.0 - gh.value / gw) / gw};
        };
    }
    fit.qbar_star = update_qbar(nuisance.qbar, eps, std::move(clever));
    return fit;
}

EstimateReport tmle1(const Dataset& data, const NuisancePair& nuisance,
                     const EstimatorConfig& config) {
    return substitution_estimate(data, nuisance, EstimatorKind::Tmle1, config);
}

EstimateReport tmle1star(const Dataset& data, const NuisancePair& nuisance,
                         const EstimatorConfig& config) {
    return substitution_estimate(data, nuisance, EstimatorKind::Tmle1Star, config);
}

EstimateReport tmle2(const Dataset& data, const NuisancePair& nuisance,
                     const EstimatorConfig& config) {
    return substitution_estimate(data, nuisance, EstimatorKind::Tmle2, config);
}

double second_order_gradient(const Observation& o1, const Observation& o2,
                             const NuisancePair& nuisance, const Predictor& density,
                             const KernelSpec& spec, const Bandwidth& h) {
    if (o1.a == 0) return 0.0;
    if (!o1.y) throw TmleError("missing outcome for observed unit");
    std::vector<double> u(o1.w.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = o1.w[j] - o2.w[j];
    const double g1 = nuisance.g(o1.w);
    const double q1 = density(o1.w);
    return 2.0 * kernel_eval(u, spec, h) / (g1 * q1) * (1.0 - o2.a / g1) *
           (*o1.y - nuisance.qbar(o1.w));
}

SecondOrderTerm second_order_term(const Dataset& data, const NuisancePair& nuisance,
                                  const KernelSpec& spec, const Bandwidth& h,
                                  double density_floor) {
    data.require_estimable();
    const std::size_t n = data.size();
    const double nn = static_cast<double>(n);
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = data.a(i);
    auto cloud = data.covariate_matrix();
    const NadarayaWatson smoother({cloud.begin(), cloud.end()}, data.dim(), std::move(a), spec, h);
    const auto sums = smoother.sums_at_points(false);
    const std::vector<double> zero(data.dim(), 0.0);
    const double k0 = kernel_eval(zero, spec, h);

    SecondOrderTerm out;
    CompensatedSum total;
    CompensatedSum diagonal;
    for (std::size_t i = 0; i < n; ++i) {
        double q = sums.total[i] / nn;
        if (q < density_floor) {
            q = density_floor;
            ++out.density_floor_hits;
        }
        if (!data.observed(i)) continue;
        const auto w = data.w(i);
        const double g = nuisance.g(w);
        const double coef = 2.0 * (data.y(i) - nuisance.qbar(w)) / (g * q);
        // sum_j K_ij (1 - a_j / g_i) = S_i - T_i / g_i
        total.add(coef * (sums.total[i] - sums.weighted[i] / g));
        diagonal.add(coef * k0 * (1.0 - 1.0 / g));
    }
    out.mean = total.value() / (nn * nn);
    out.diagonal = diagonal.value() / (nn * nn);
    return out;
}

EstimateReport robins_so(const Dataset& data, const NuisancePair& nuisance,
                         const EstimatorConfig& config_in) {
    EstimatorConfig config = config_in;
    config.estimator = EstimatorKind::Robins2;
    config.validate();
    data.require_estimable();
    EstimateReport report;
    report.estimator = EstimatorKind::Robins2;
    report.kernel = config.kernel;
    const NuisancePair nt = truncated(nuisance, config.truncation);
    const Bandwidth h = resolve_impl(data, nuisance, EstimatorKind::Robins2, config, &report.warnings).value();
    report.bandwidth_used = h;

    CompensatedSum plugin;
    CompensatedSum first_order;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto w = data.w(i);
        if (nuisance.g(w) < config.truncation.g_floor) report.positivity_flag = true;
        const double q = nt.qbar(w);
        plugin.add(q);
        if (data.observed(i)) first_order.add((data.y(i) - q) / nt.g(w));
    }
    const double nn = static_cast<double>(data.size());
    const SecondOrderTerm so = second_order_term(data, nt, config.kernel, h, config.truncation.q_floor);
    report.psi = plugin.value() / nn + first_order.value() / nn + 0.5 * so.mean;
    report.diagonal_contribution = 0.5 * so.diagonal;
    report.density_floor_hits = so.density_floor_hits;
    report.out_of_range = !(report.psi >= 0.0 && report.psi <= 1.0);
    if (report.out_of_range) {
        report.warnings.push_back("one-step estimate falls outside [0, 1]");
    }
    if (so.density_floor_hits * 20 > data.size()) {
        report.warnings.push_back(std::to_string(so.density_floor_hits) +
                                  " density estimates below the floor");
    }
    if (report.positivity_flag) {
        report.warnings.push_back("estimated missingness score below truncation floor");
    }
    attach_variance(report, data, nuisance, config,
                    [&] { return influence_variance(data, nt.qbar, nt.g, report.psi); });
    return report;
}

EstimateReport estimate(const Dataset& data, const NuisancePair& nuisance,
                        const EstimatorConfig& config) {
    switch (config.estimator) {
        case EstimatorKind::Tmle1:
            return tmle1(data, nuisance, config);
        case EstimatorKind::Tmle1Star:
            return tmle1star(data, nuisance, config);
        case EstimatorKind::Tmle2:
            return tmle2(data, nuisance, config);
        case EstimatorKind::Robins2:
            return robins_so(data, nuisance, config);
    }
    throw TmleError("unknown estimator");
}

EstimateReport estimate_with_learners(const Dataset& data, const Learner& outcome_learner,
                                      const Learner& missingness_learner,
                                      const EstimatorConfig& config) {
    config.validate();
    const NuisancePair nuisance = fit_nuisance(data, outcome_learner, missingness_learner);
    if (config.variance.mode != VarianceMode::Bootstrap) {
        return estimate(data, nuisance, config);
    }
    EstimatorConfig inner = config;
    inner.variance.mode = VarianceMode::Influence;
    EstimateReport report = estimate(data, nuisance, inner);
    Pipeline pipeline;
    if (config.variance.refit_nuisance) {
        pipeline = [&, inner](const Dataset& d) {
            return estimate(d, fit_nuisance(d, outcome_learner, missingness_learner), inner).psi;
        };
    } else {
        pipeline = [nuisance, inner](const Dataset& d) { return estimate(d, nuisance, inner).psi; };
    }
    const BootstrapResult boot = bootstrap_se(data, pipeline, config.variance.bootstrap_reps,
                                              config.variance.seed, config.ci_level,
                                              config.variance.threads);
    report.se = boot.se;
    report.ci_lower = boot.ci_lower;
    report.ci_upper = boot.ci_upper;
    report.bootstrap_failures = boot.failures;
    return report;
}

double influence_variance(const Dataset& data, const Predictor& qbar_star, const Predictor& g,
                          double psi) {
    std::vector<double> qv(data.size());
    std::vector<double> gv(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        qv[i] = qbar_star(data.w(i));
        gv[i] = g(data.w(i));
    }
    return influence_variance(data, qv, gv, psi);
}

double influence_variance(const Dataset& data, std::span<const double> qbar_star,
                          std::span<const double> g, double psi) {
    const std::size_t n = data.size();
    if (n < 2) {
        throw TmleError("influence variance needs at least two observations");
    }
    if (qbar_star.size() != n || g.size() != n) {
        throw TmleError("influence variance inputs do not match the sample size");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = eif_d1(data.a(i), data.observed(i) ? data.y(i) : 0.0, qbar_star[i], g[i], psi);
    }
    const double mean = compensated_mean(values);
    CompensatedSum ss;
    for (double v : values) ss.add((v - mean) * (v - mean));
    const double nn = static_cast<double>(n);
    return ss.value() / (nn - 1.0) / nn;
}

}  // namespace sotmle
