#pragma once

#include <cstdint>
#include <vector>

#include "sotmle/estimators.hpp"

namespace sotmle {

struct CvScore {
    Bandwidth h;
    double rss = 0.0;
    double variance = 0.0;
    double bias = 0.0;
    double criterion = 0.0;  // rss + variance + n * bias^2
    double psi_full = 0.0;
    std::vector<double> fold_psi;
    bool failed = false;
};

struct CvResult {
    Bandwidth selected;
    std::vector<CvScore> scores;  // in grid order
};

/// Cross-validated bandwidth choice for Tmle1Star or Tmle2.
///
/// For every candidate h and fold s the estimator is targeted on the training part T(s) with the
/// supplied nuisances; on the validation part V(s) the residual sum of squares of observed
/// outcomes and the squared influence terms centred at the training estimate are accumulated.
/// The bias term is the mean over folds of (psi_{h,s} - psi_h), psi_h being the full-sample
/// estimate. Ties go to the larger bandwidth. Folds come from fold_assignment(n, folds, seed).
CvResult cv_bandwidth(const Dataset& data, const NuisancePair& nuisance,
                      const std::vector<Bandwidth>& grid, int folds, EstimatorKind estimator,
                      const EstimatorConfig& config, std::uint64_t seed);

}  // namespace sotmle
