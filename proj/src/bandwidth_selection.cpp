#include "sotmle/bandwidth_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sotmle {

namespace {

// lexicographic on the entries; grids built by scaling compare as scalars
bool larger(const Bandwidth& a, const Bandwidth& b) {
    return std::lexicographical_compare(b.values().begin(), b.values().end(), a.values().begin(),
                                        a.values().end());
}

}  // namespace

CvResult cv_bandwidth(const Dataset& data, const NuisancePair& nuisance,
                      const std::vector<Bandwidth>& grid, int folds, EstimatorKind estimator,
                      const EstimatorConfig& config, std::uint64_t seed) {
    if (grid.empty()) {
        throw TmleError("empty bandwidth grid");
    }
    if (estimator != EstimatorKind::Tmle1Star && estimator != EstimatorKind::Tmle2) {
        throw TmleError("cross-validated bandwidth is available for tmle1star and tmle2 only");
    }
    if (folds < 2) {
        throw TmleError("need at least two folds");
    }
    data.require_estimable();
    const std::size_t n = data.size();
    const auto fold = fold_assignment(n, folds, seed);

    std::vector<Dataset> training;
    std::vector<std::vector<std::size_t>> validation(static_cast<std::size_t>(folds));
    for (int s = 0; s < folds; ++s) {
        std::vector<std::size_t> train_idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (fold[i] == s) {
                validation[static_cast<std::size_t>(s)].push_back(i);
            } else {
                train_idx.push_back(i);
            }
        }
        Dataset train = data.subset(train_idx);
        if (train.observed_count() == 0) {
            throw TmleError("fold degenerate; reduce S");
        }
        training.push_back(std::move(train));
    }

    const Truncation trunc = config.truncation;
    CvResult result;
    result.scores.reserve(grid.size());
    for (const Bandwidth& h : grid) {
        CvScore score;
        score.h = h;
        try {
            score.psi_full = targeted_fit(data, nuisance, estimator, config, h).psi;
            CompensatedSum rss;
            CompensatedSum var;
            CompensatedSum bias;
            for (int s = 0; s < folds; ++s) {
                const TargetedFit fit =
                    targeted_fit(training[static_cast<std::size_t>(s)], nuisance, estimator, config, h);
                score.fold_psi.push_back(fit.psi);
                for (std::size_t i : validation[static_cast<std::size_t>(s)]) {
                    const auto w = data.w(i);
                    const double q = fit.qbar_star(w);
                    const double g = trunc.clamp_g(nuisance.g(w));
                    double term = q - fit.psi;
                    if (data.observed(i)) {
                        const double r = data.y(i) - q;
                        rss.add(r * r);
                        term += r / g;
                    }
                    var.add(term * term);
                }
                bias.add(fit.psi - score.psi_full);
            }
            score.rss = rss.value();
            score.variance = var.value();
            score.bias = bias.value() / static_cast<double>(folds);
            score.criterion = score.rss + score.variance + static_cast<double>(n) * score.bias * score.bias;
        } catch (const TmleError&) {
            score.failed = true;
            score.criterion = std::numeric_limits<double>::infinity();
        }
        result.scores.push_back(std::move(score));
    }

    const CvScore* best = nullptr;
    for (const auto& s : result.scores) {
        if (s.failed) continue;
        if (best == nullptr || s.criterion < best->criterion ||
            (s.criterion == best->criterion && larger(s.h, best->h))) {
            best = &s;
        }
    }
    if (best == nullptr) {
        throw TmleError("every candidate bandwidth failed");
    }
    result.selected = best->h;
    return result;
}

}  // namespace sotmle
