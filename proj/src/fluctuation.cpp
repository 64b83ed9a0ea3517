#include "sotmle/fluctuation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace sotmle {

namespace {

constexpr double kCollinearityTol = 1e-10;

// Design actually regressed on: Weighted mode regresses on a constant column.
struct Design {
    std::vector<std::vector<double>> columns;
    std::vector<double> weights;
};

Design effective_design(const FluctuationProblem& p) {
    const std::size_t n = p.rows();
    Design d;
    if (p.mode == FluctuationMode::Weighted) {
        d.columns = {std::vector<double>(n, 1.0)};
        d.weights = p.covariates.front();
        if (!p.weights.empty()) {
            for (std::size_t i = 0; i < n; ++i) d.weights[i] *= p.weights[i];
        }
    } else {
        d.columns = p.covariates;
        d.weights = p.weights.empty() ? std::vector<double>(n, 1.0) : p.weights;
    }
    return d;
}

double log_lik(const Design& d, const FluctuationProblem& p, std::span<const double> eps) {
    CompensatedSum ll;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double eta = p.offsets[i];
        for (std::size_t k = 0; k < eps.size(); ++k) eta += eps[k] * d.columns[k][i];
        // log expit(eta) and log(1 - expit(eta)) computed stably
        const double log_mu = -std::log1p(std::exp(-std::abs(eta))) + std::min(eta, 0.0);
        const double log_1m_mu = -std::log1p(std::exp(-std::abs(eta))) - std::max(eta, 0.0);
        const double y = p.outcomes[i];
        ll.add(d.weights[i] * (y * log_mu + (1.0 - y) * log_1m_mu));
    }
    return ll.value();
}

struct Derivatives {
    Eigen::VectorXd score;
    Eigen::MatrixXd information;
};

Derivatives derivatives(const Design& d, const FluctuationProblem& p,
                        std::span<const double> eps) {
    const auto k = static_cast<Eigen::Index>(eps.size());
    std::vector<CompensatedSum> score(static_cast<std::size_t>(k));
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double eta = p.offsets[i];
        for (Eigen::Index c = 0; c < k; ++c) eta += eps[c] * d.columns[c][i];
        const double mu = expit(eta);
        const double r = d.weights[i] * (p.outcomes[i] - mu);
        const double v = d.weights[i] * mu * (1.0 - mu);
        for (Eigen::Index a = 0; a < k; ++a) {
            score[static_cast<std::size_t>(a)].add(d.columns[a][i] * r);
            for (Eigen::Index b = 0; b <= a; ++b) {
                info(a, b) += d.columns[a][i] * d.columns[b][i] * v;
            }
        }
    }
    Derivatives out{Eigen::VectorXd(k), info.selfadjointView<Eigen::Lower>()};
    for (Eigen::Index a = 0; a < k; ++a) out.score(a) = score[static_cast<std::size_t>(a)].value();
    return out;
}

bool collinear(const std::vector<double>& x1, const std::vector<double>& x2,
               const std::vector<double>& w) {
    double s11 = 0.0, s22 = 0.0, s12 = 0.0;
    for (std::size_t i = 0; i < x1.size(); ++i) {
        s11 += w[i] * x1[i] * x1[i];
        s22 += w[i] * x2[i] * x2[i];
        s12 += w[i] * x1[i] * x2[i];
    }
    if (s22 <= kCollinearityTol * kCollinearityTol * s11) return true;
    return s11 * s22 - s12 * s12 <= kCollinearityTol * s11 * s22;
}

// Score residuals against the caller's columns, whatever was actually fitted.
std::vector<double> residuals_for(const FluctuationProblem& p, const Design& fitted,
                                  std::span<const double> eps) {
    const Design full = effective_design(p);
    std::vector<CompensatedSum> acc(full.columns.size());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double eta = p.offsets[i];
        for (std::size_t k = 0; k < eps.size(); ++k) eta += eps[k] * fitted.columns[k][i];
        const double r = full.weights[i] * (p.outcomes[i] - expit(eta));
        for (std::size_t k = 0; k < full.columns.size(); ++k) acc[k].add(full.columns[k][i] * r);
    }
    std::vector<double> out;
    out.reserve(acc.size());
    for (const auto& a : acc) out.push_back(a.value());
    return out;
}

}  // namespace

void FluctuationProblem::validate() const {
    const std::size_t n = rows();
    if (covariates.empty() || covariates.size() > 2) {
        throw TmleError("fluctuation takes one or two clever covariates");
    }
    if (mode == FluctuationMode::Weighted && covariates.size() != 1) {
        throw TmleError("weighted fluctuation takes a single covariate");
    }
    if (outcomes.size() != n || (!weights.empty() && weights.size() != n)) {
        throw TmleError("fluctuation inputs have inconsistent lengths");
    }
    for (const auto& c : covariates) {
        if (c.size() != n) throw TmleError("fluctuation inputs have inconsistent lengths");
    }
    const std::size_t params = mode == FluctuationMode::Weighted ? 1 : covariates.size();
    if (n < params) {
        throw TmleError("fewer observed units than fluctuation parameters");
    }
}

double fluctuation_log_likelihood(const FluctuationProblem& problem,
                                  std::span<const double> epsilon) {
    return log_lik(effective_design(problem), problem, epsilon);
}

FluctuationFit fit_fluctuation(const FluctuationProblem& problem, double tol, int max_iter) {
    problem.validate();
    Design design = effective_design(problem);
    const std::size_t requested = design.columns.size();
    FluctuationFit fit;
    if (requested == 2 && collinear(design.columns[0], design.columns[1], design.weights)) {
        design.columns.pop_back();
        fit.degraded = true;
    }
    const std::size_t k = design.columns.size();
    const double n = static_cast<double>(problem.rows());

    std::vector<double> eps(k, 0.0);
    double ll = log_lik(design, problem, eps);
    auto converged = [&](const Eigen::VectorXd& s) { return s.cwiseAbs().maxCoeff() <= tol * n; };

    auto finalize = [&](int iterations) {
        fit.iterations = iterations;
        fit.log_likelihood = ll;
        fit.epsilon = eps;
        fit.epsilon.resize(requested, 0.0);
        fit.score_residuals = residuals_for(problem, design, eps);
    };

    for (int iter = 0; iter < max_iter; ++iter) {
        const Derivatives d = derivatives(design, problem, eps);
        if (converged(d.score)) {
            finalize(iter);
            return fit;
        }
        Eigen::VectorXd step = d.information.ldlt().solve(d.score);
        if (!step.allFinite()) {
            finalize(iter);
            throw FluctuationError("singular information in fluctuation", fit);
        }
        // step-halving until the likelihood does not decrease
        std::vector<double> trial(k);
        double scale = 1.0;
        double trial_ll = -INFINITY;
        for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
            for (std::size_t c = 0; c < k; ++c) {
                trial[c] = eps[c] + scale * step(static_cast<Eigen::Index>(c));
            }
            trial_ll = log_lik(design, problem, trial);
            if (trial_ll >= ll - 1e-12 * std::abs(ll)) break;
        }
        eps = trial;
        ll = std::max(ll, trial_ll);
        for (double e : eps) {
            if (std::abs(e) > kSeparationBound) {
                finalize(iter + 1);
                throw FluctuationError("separation in fluctuation", fit);
            }
        }
    }
    const Derivatives d = derivatives(design, problem, eps);
    finalize(max_iter);
    if (converged(d.score)) {
        return fit;
    }
    throw FluctuationError("fluctuation did not converge", fit);
}

Predictor update_qbar(Predictor qbar, std::vector<double> epsilon, CovariateMap h_covariates) {
    return [qbar = std::move(qbar), eps = std::move(epsilon),
            h = std::move(h_covariates)](std::span<const double> w) {
        const std::vector<double> hw = h(w);
        if (hw.size() != eps.size()) {
            throw TmleError("fluctuation coefficient length does not match covariate count");
        }
        double eta = logit(Truncation::clamp_qbar(qbar(w)));
        for (std::size_t k = 0; k < eps.size(); ++k) eta += eps[k] * hw[k];
        return expit(eta);
    };
}

}  // namespace sotmle
