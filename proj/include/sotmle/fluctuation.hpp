#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sotmle/core.hpp"

namespace sotmle {

enum class FluctuationMode {
    Covariate,  // logit Q_eps = logit Q + eps . H
    Weighted,   // logit Q_eps = logit Q + eps, unit weights H
};

/// Offset logistic submodel over the observed (a = 1) units.
///
/// `covariates` holds one or two columns (H1 and optionally H2). In Weighted mode the single
/// column is used as observation weights for an intercept-only fluctuation. Explicit `weights`
/// may also be supplied in Covariate mode.
struct FluctuationProblem {
    std::vector<double> offsets;
    std::vector<std::vector<double>> covariates;
    std::vector<double> outcomes;
    std::vector<double> weights;
    FluctuationMode mode = FluctuationMode::Covariate;

    std::size_t rows() const { return offsets.size(); }
    void validate() const;
};

struct FluctuationFit {
    std::vector<double> epsilon;
    /// sum_i weight_i H_k(W_i) (Y_i - expit(offset_i + eps . H_i)), one entry per input column.
    std::vector<double> score_residuals;
    int iterations = 0;
    bool degraded = false;  // second column dropped as collinear with the first
    double log_likelihood = 0.0;
};

/// Thrown when Newton iterations fail; carries the best iterate found.
class FluctuationError : public TmleError {
public:
    FluctuationError(const std::string& what, FluctuationFit best)
        : TmleError(what), best_(std::move(best)) {}
    const FluctuationFit& best() const { return best_; }

private:
    FluctuationFit best_;
};

inline constexpr double kSeparationBound = 50.0;

/// Maximizes the Bernoulli quasi-log-likelihood in eps by damped Newton-Raphson.
/// Converges when every |score| <= tol * rows.
FluctuationFit fit_fluctuation(const FluctuationProblem& problem, double tol = 1e-10,
                               int max_iter = 100);

double fluctuation_log_likelihood(const FluctuationProblem& problem,
                                  std::span<const double> epsilon);

using CovariateMap = std::function<std::vector<double>(std::span<const double>)>;

/// w -> expit(logit Qbar(w) + eps . H(w)), with Qbar clamped away from 0 and 1 before logit.
Predictor update_qbar(Predictor qbar, std::vector<double> epsilon, CovariateMap h_covariates);

}  // namespace sotmle
