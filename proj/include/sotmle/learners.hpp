#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sotmle/core.hpp"

namespace sotmle {

enum class LearnerTarget {
    OutcomeGivenObserved,  // Y on W among a = 1 units
    Missingness,           // A on W over all units
};

/// Named transformation of the covariate vector, one column of a design matrix.
struct DesignTerm {
    std::string name;
    std::function<double(std::span<const double>)> f;

    static DesignTerm intercept();
    static DesignTerm identity(std::size_t j);
    static DesignTerm exp_of(std::size_t j);
};

using Design = std::vector<DesignTerm>;

/// (1, w1, ..., wd).
Design main_terms_design(std::size_t dim);

struct LearnerSpec {
    Design design;
    LearnerTarget target = LearnerTarget::Missingness;
};

/// Logistic GLM fitted by IRLS, exposing its linear predictor.
class LogisticFit {
public:
    LogisticFit(Design design, std::vector<double> coefficients, std::vector<double> std_errors,
                int iterations);

    double linear_predictor(std::span<const double> w) const;
    double operator()(std::span<const double> w) const { return expit(linear_predictor(w)); }

    const std::vector<double>& coefficients() const { return coef_; }
    const std::vector<double>& standard_errors() const { return se_; }
    const Design& design() const { return design_; }
    int iterations() const { return iterations_; }

    Predictor predictor() const;

private:
    Design design_;
    std::vector<double> coef_;
    std::vector<double> se_;
    int iterations_;
};

inline constexpr double kLogisticSeparationBound = 50.0;

/// Maximum-likelihood logistic regression (responses may be fractional in [0, 1]).
/// Throws on rank deficiency (naming the column) and on separation.
LogisticFit fit_logistic(const Dataset& data, const LearnerSpec& spec, double tol = 1e-10,
                         int max_iter = 100);

/// How often the (U, V) distortion is drawn.
enum class PerturbationScope {
    PerFit,   // one draw for the whole fit
    PerUnit,  // an independent draw for every distinct covariate value
};

/// Fitted logistic predictor with its linear predictor distorted: expit(LP(w) * U - V),
/// U ~ Uniform(1 - n^-rate, 1), V ~ Normal(3 n^-rate, n^-rate).
class PerturbedPredictor {
public:
    PerturbedPredictor(LogisticFit base, double rate, std::size_t n, double u, double v);
    /// PerUnit form: (U, V) at w are a fixed function of (key, w).
    PerturbedPredictor(LogisticFit base, double rate, std::size_t n, std::uint64_t key);

    double linear_predictor(std::span<const double> w) const;
    double operator()(std::span<const double> w) const { return expit(linear_predictor(w)); }

    /// Realized (U, V) at w; the same for every w under PerFit.
    std::pair<double, double> draw_at(std::span<const double> w) const;

    double multiplier() const { return u_; }
    double shift() const { return v_; }
    double rate() const { return rate_; }
    PerturbationScope scope() const { return scope_; }
    const LogisticFit& base() const { return base_; }

    Predictor predictor() const;

private:
    LogisticFit base_;
    double rate_;
    std::size_t n_;
    double u_;
    double v_;
    PerturbationScope scope_ = PerturbationScope::PerFit;
    std::uint64_t key_ = 0;
};

PerturbedPredictor perturb(const LogisticFit& base, double rate, std::size_t n,
                           std::mt19937_64& rng,
                           PerturbationScope scope = PerturbationScope::PerFit);

/// w -> level for every w.
Predictor constant_learner(double level);

/// Anything that maps a dataset to a fitted predictor can serve as an initial estimator.
class Learner {
public:
    virtual ~Learner() = default;
    virtual Predictor fit(const Dataset& data, LearnerTarget target) const = 0;
    virtual std::string name() const = 0;
};

/// Logistic GLM on a design built from the covariate dimension.
class GlmLearner : public Learner {
public:
    using DesignFactory = std::function<Design(std::size_t dim)>;

    GlmLearner();  // main terms
    explicit GlmLearner(DesignFactory factory);

    Predictor fit(const Dataset& data, LearnerTarget target) const override;
    std::string name() const override { return "glm"; }

private:
    DesignFactory factory_;
};

/// Constant at the sample mean of the target (unadjusted analysis).
class MeanLearner : public Learner {
public:
    Predictor fit(const Dataset& data, LearnerTarget target) const override;
    std::string name() const override { return "mean"; }
};

std::unique_ptr<Learner> make_learner(const std::string& name);

NuisancePair fit_nuisance(const Dataset& data, const Learner& outcome_learner,
                          const Learner& missingness_learner);

}  // namespace sotmle
