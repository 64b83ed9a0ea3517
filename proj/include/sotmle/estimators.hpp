#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sotmle/core.hpp"
#include "sotmle/fluctuation.hpp"
#include "sotmle/kernel.hpp"
#include "sotmle/learners.hpp"

namespace sotmle {

enum class EstimatorKind {
    Tmle1,      // first-order TMLE
    Tmle1Star,  // extra clever covariate from smoothing A on ghat(W)
    Tmle2,      // extra clever covariate from smoothing A on W
    Robins2,    // one-step second-order estimator with density weighting
};

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator(std::string_view name);

struct BandwidthChoice {
    enum class Rule { Default, CrossValidated, Fixed };

    Rule rule = Rule::Default;
    std::optional<Bandwidth> fixed;
    std::vector<Bandwidth> grid;  // empty: default_candidate_grid around the rule of thumb
    int folds = 5;
    std::uint64_t seed = 0;

    static BandwidthChoice default_rule() { return {}; }
    static BandwidthChoice fixed_value(Bandwidth h) { return {Rule::Fixed, std::move(h), {}, 5, 0}; }
    static BandwidthChoice cross_validated(int folds, std::uint64_t seed,
                                           std::vector<Bandwidth> grid = {}) {
        return {Rule::CrossValidated, std::nullopt, std::move(grid), folds, seed};
    }
};

enum class VarianceMode { Influence, Known, Bootstrap };

struct VarianceChoice {
    VarianceMode mode = VarianceMode::Influence;
    double known_variance = 0.0;  // variance of the estimator itself (Known)
    int bootstrap_reps = 200;     // Bootstrap
    std::uint64_t seed = 0;
    bool refit_nuisance = true;   // Bootstrap with learners: refit Qbar and g per replicate
    unsigned threads = 1;
};

struct EstimatorConfig {
    EstimatorKind estimator = EstimatorKind::Tmle1;
    KernelSpec kernel;
    BandwidthChoice bandwidth;
    FluctuationMode fluctuation = FluctuationMode::Covariate;
    Truncation truncation;
    double ci_level = 0.95;
    VarianceChoice variance;
    bool leave_one_out = false;  // evaluate ghat_h at W_i without unit i
    double tol = 1e-10;
    int max_iter = 100;

    void validate() const;
};

struct EstimateReport {
    EstimatorKind estimator = EstimatorKind::Tmle1;
    double psi = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::vector<double> epsilon;
    std::vector<double> score_residuals;
    std::optional<Bandwidth> bandwidth_used;
    KernelSpec kernel;
    bool out_of_range = false;     // psi outside [0, 1] (only the one-step estimator)
    bool positivity_flag = false;  // some ghat(W_i) fell below the truncation floor
    bool degraded = false;         // H2 dropped as collinear with H1
    std::size_t kernel_fallbacks = 0;
    std::size_t density_floor_hits = 0;
    double diagonal_contribution = 0.0;  // i = j part of the one-step double sum
    std::size_t bootstrap_failures = 0;
    std::vector<std::string> warnings;
};

/// Result of the targeting step for the substitution estimators.
struct TargetedFit {
    Predictor qbar_star;                  // updated outcome regression, evaluable anywhere
    std::vector<double> qbar_star_values; // at the sample points
    std::vector<double> g_values;         // truncated ghat at the sample points
    std::vector<double> h1_values;
    std::vector<double> h2_values;        // empty for the first-order TMLE
    double psi = 0.0;
    FluctuationFit fluctuation;
    std::optional<Bandwidth> bandwidth;
    std::size_t kernel_fallbacks = 0;
    bool positivity_flag = false;
};

/// Bandwidth used by `kind` under config.bandwidth (nullopt for the first-order TMLE).
std::optional<Bandwidth> resolve_bandwidth(const Dataset& data, const NuisancePair& nuisance,
                                           EstimatorKind kind, const EstimatorConfig& config);

/// Targeting step for Tmle1, Tmle1Star or Tmle2 at a given bandwidth.
TargetedFit targeted_fit(const Dataset& data, const NuisancePair& nuisance, EstimatorKind kind,
                         const EstimatorConfig& config, const std::optional<Bandwidth>& h);

EstimateReport tmle1(const Dataset& data, const NuisancePair& nuisance,
                     const EstimatorConfig& config);
EstimateReport tmle1star(const Dataset& data, const NuisancePair& nuisance,
                         const EstimatorConfig& config);
EstimateReport tmle2(const Dataset& data, const NuisancePair& nuisance,
                     const EstimatorConfig& config);
EstimateReport robins_so(const Dataset& data, const NuisancePair& nuisance,
                         const EstimatorConfig& config);

/// Dispatches on config.estimator.
EstimateReport estimate(const Dataset& data, const NuisancePair& nuisance,
                        const EstimatorConfig& config);

/// Fits the nuisances with the given learners and runs estimate(); a Bootstrap variance
/// resamples the whole pipeline (refitting nuisances when variance.refit_nuisance).
EstimateReport estimate_with_learners(const Dataset& data, const Learner& outcome_learner,
                                      const Learner& missingness_learner,
                                      const EstimatorConfig& config);

/// Pair kernel of the approximate second-order gradient,
/// 2 a1 K_h(w1 - w2) / (g(w1) q(w1)) * (1 - a2 / g(w1)) * (y1 - Qbar(w1)).
double second_order_gradient(const Observation& o1, const Observation& o2,
                             const NuisancePair& nuisance, const Predictor& density,
                             const KernelSpec& spec, const Bandwidth& h);

struct SecondOrderTerm {
    double mean = 0.0;      // (1/n^2) sum_i sum_j D2(O_i, O_j)
    double diagonal = 0.0;  // (1/n^2) sum_i D2(O_i, O_i)
    std::size_t density_floor_hits = 0;
};

/// Empirical double mean of the second-order gradient over all ordered pairs (including i = j),
/// with the density estimated by a kernel density estimate on the same sample.
SecondOrderTerm second_order_term(const Dataset& data, const NuisancePair& nuisance,
                                  const KernelSpec& spec, const Bandwidth& h, double density_floor);

/// (1/n) times the sample variance of the influence function at (qbar_star, g, psi).
double influence_variance(const Dataset& data, const Predictor& qbar_star, const Predictor& g,
                          double psi);
/// Same, from values already evaluated at the sample points.
double influence_variance(const Dataset& data, std::span<const double> qbar_star,
                          std::span<const double> g, double psi);

/// Two-sided standard-normal critical value for a confidence level.
double normal_critical_value(double level);

// ---------------------------------------------------------------------------------------------
// Bootstrap

using Pipeline = std::function<double(const Dataset&)>;

struct BootstrapResult {
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::vector<double> replicates;  // successful replicates, in replicate order
    std::size_t failures = 0;
};

/// Replicate b resamples n rows with replacement from a stream keyed by (seed, b).
/// Failed replicates (exceptions) come back empty.
std::vector<std::optional<double>> bootstrap_replicates(const Dataset& data,
                                                        const Pipeline& pipeline, int reps,
                                                        std::uint64_t seed, unsigned threads = 1);

/// Standard deviation and percentile interval of B >= 100 replicates; more than 10% failed
/// replicates is an error.
BootstrapResult bootstrap_se(const Dataset& data, const Pipeline& pipeline, int reps,
                             std::uint64_t seed, double level = 0.95, unsigned threads = 1);

// ---------------------------------------------------------------------------------------------
// Outcome scaling and the treatment-effect workflow

struct OutcomeScale {
    double min = 0.0;
    double max = 1.0;

    double unscale(double psi) const { return psi * (max - min) + min; }
    double unscale_se(double se) const { return se * (max - min); }
    bool is_identity() const { return min == 0.0 && max == 1.0; }
};

struct ScaledOutcome {
    std::vector<double> values;
    OutcomeScale scale;
};

/// (y - min) / (max - min).
ScaledOutcome scale_outcome(std::span<const double> y);
double unscale(double psi_scaled, double min, double max);

struct AteReport {
    EstimateReport treated;  // A := T (scaled units)
    EstimateReport control;  // A := 1 - T (scaled units)
    double psi1 = 0.0;       // original outcome units
    double psi0 = 0.0;
    double diff = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    std::size_t bootstrap_failures = 0;
};

/// E(Y1) - E(Y0): each arm is a missing-outcome problem with its own nuisance fits.
/// data.a marks rows whose outcome was recorded; arm t uses the indicator 1{T = t} * a.
AteReport ate(const Dataset& data, std::span<const int> treatment, const Learner& outcome_learner,
              const Learner& missingness_learner, const EstimatorConfig& config,
              const OutcomeScale& scale = {});

}  // namespace sotmle
