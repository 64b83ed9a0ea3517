#include <algorithm>
#include <cmath>

#include "internal.hpp"
#include "sotmle/estimators.hpp"
#include "sotmle/parallel.hpp"

namespace sotmle {

ScaledOutcome scale_outcome(std::span<const double> y) {
    if (y.empty()) {
        throw TmleError("empty outcome vector");
    }
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    if (!(*hi > *lo)) {
        throw TmleError("degenerate outcome range");
    }
    ScaledOutcome out{{}, {*lo, *hi}};
    out.values.reserve(y.size());
    for (double v : y) out.values.push_back((v - *lo) / (*hi - *lo));
    return out;
}

double unscale(double psi_scaled, double min, double max) { return OutcomeScale{min, max}.unscale(psi_scaled); }

namespace {

struct Arms {
    Dataset treated;
    Dataset control;
};

Arms split_arms(const Dataset& data, std::span<const int> treatment) {
    if (treatment.size() != data.size()) {
        throw TmleError("treatment column length does not match the data");
    }
    std::vector<int> a1(data.size());
    std::vector<int> a0(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int t = treatment[i];
        if (t != 0 && t != 1) throw TmleError("treatment must be 0 or 1");
        a1[i] = t * data.a(i);
        a0[i] = (1 - t) * data.a(i);
    }
    if (std::count(a1.begin(), a1.end(), 1) == 0) throw TmleError("empty treatment arm");
    if (std::count(a0.begin(), a0.end(), 1) == 0) throw TmleError("empty control arm");
    return {data.with_indicator(a1), data.with_indicator(a0)};
}

}  // namespace

AteReport ate(const Dataset& data, std::span<const int> treatment, const Learner& outcome_learner,
              const Learner& missingness_learner, const EstimatorConfig& config,
              const OutcomeScale& scale) {
    config.validate();
    EstimatorConfig inner = config;
    inner.variance.mode = VarianceMode::Influence;

    const Arms arms = split_arms(data, treatment);
    AteReport report;
    report.treated = estimate_with_learners(arms.treated, outcome_learner, missingness_learner, inner);
    report.control = estimate_with_learners(arms.control, outcome_learner, missingness_learner, inner);
    report.psi1 = scale.unscale(report.treated.psi);
    report.psi0 = scale.unscale(report.control.psi);
    report.diff = report.psi1 - report.psi0;

    if (config.variance.mode != VarianceMode::Bootstrap) {
        double var_scaled = 0.0;
        if (config.variance.mode == VarianceMode::Known) {
            var_scaled = config.variance.known_variance;
        } else {
            var_scaled = report.treated.se * report.treated.se + report.control.se * report.control.se;
        }
        report.se = scale.unscale_se(std::sqrt(var_scaled));
        const double z = normal_critical_value(config.ci_level);
        report.ci_lower = report.diff - z * report.se;
        report.ci_upper = report.diff + z * report.se;
        return report;
    }

    // resample rows together with their treatment labels; both arms refitted per replicate
    const int reps = config.variance.bootstrap_reps;
    std::vector<std::optional<double>> raw(static_cast<std::size_t>(reps));
    const std::vector<int> t(treatment.begin(), treatment.end());
    const NuisancePair n1 = fit_nuisance(arms.treated, outcome_learner, missingness_learner);
    const NuisancePair n0 = fit_nuisance(arms.control, outcome_learner, missingness_learner);
    parallel_for(raw.size(), config.variance.threads, [&](std::size_t b) {
        const auto idx = detail::resample_indices(data.size(), config.variance.seed, b);
        std::vector<int> tb(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) tb[k] = t[idx[k]];
        try {
            const Arms rs = split_arms(data.subset(idx), tb);
            double p1 = 0.0;
            double p0 = 0.0;
            if (config.variance.refit_nuisance) {
                p1 = estimate_with_learners(rs.treated, outcome_learner, missingness_learner, inner).psi;
                p0 = estimate_with_learners(rs.control, outcome_learner, missingness_learner, inner).psi;
            } else {
                p1 = estimate(rs.treated, n1, inner).psi;
                p0 = estimate(rs.control, n0, inner).psi;
            }
            raw[b] = scale.unscale(p1) - scale.unscale(p0);
        } catch (const std::exception&) {
            raw[b] = std::nullopt;
        }
    });
    std::vector<double> ok;
    for (const auto& r : raw) {
        if (r) ok.push_back(*r);
        else ++report.bootstrap_failures;
    }
    if (report.bootstrap_failures * 10 > raw.size()) {
        throw TmleError("more than 10% of bootstrap replicates failed");
    }
    report.se = detail::sample_sd(ok);
    std::sort(ok.begin(), ok.end());
    report.ci_lower = detail::quantile_sorted(ok, (1.0 - config.ci_level) / 2.0);
    report.ci_upper = detail::quantile_sorted(ok, (1.0 + config.ci_level) / 2.0);
    return report;
}

}  // namespace sotmle
