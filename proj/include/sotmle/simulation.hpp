#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sotmle/core.hpp"
#include "sotmle/estimators.hpp"
#include "sotmle/learners.hpp"

namespace sotmle {

/// Beta(a, b) draw for any positive shapes, including a, b < 1. The result lies in (0, 1).
double sample_beta(double a, double b, std::mt19937_64& rng);

/// A data-generating process for (W, A, Y) with its true nuisances and the correctly
/// specified GLM designs used in the simulations.
struct Dgp {
    std::string name;
    std::size_t dim = 1;
    std::function<void(std::mt19937_64&, std::span<double>)> draw_w;
    Predictor g0;
    Predictor qbar0;
    /// Outcome given A = 1 and W; empty means Bernoulli(qbar0(w)).
    std::function<double(std::span<const double>, std::mt19937_64&)> draw_y;
    Design qbar_design;
    Design g_design;
    bool builtin = false;
};

Dgp dgp_d1();
Dgp dgp_d3();
/// "d1" or "d3" (case-insensitive).
Dgp dgp_by_name(const std::string& name);

/// n i.i.d. draws; outcomes are stored only for a = 1.
Dataset generate(const Dgp& dgp, std::size_t n, std::mt19937_64& rng);

struct MonteCarloValue {
    double value = 0.0;
    double mc_se = 0.0;
};

/// Draws are split into fixed chunks with their own streams, so results do not depend on
/// the thread count.
inline constexpr std::size_t kOracleChunk = 1u << 16;

/// E[Qbar0(W)] by Monte Carlo over M covariate draws. Built-in DGPs are memoized per (M, seed).
MonteCarloValue oracle_psi0(const Dgp& dgp, std::size_t M, std::uint64_t seed,
                            unsigned threads = 1);

/// Var D1(O; Qbar0, g0, psi0) over M full draws; psi0 only shifts the mean and drops out.
MonteCarloValue efficiency_bound(const Dgp& dgp, std::size_t M, std::uint64_t seed,
                                 unsigned threads = 1);

/// Seed of the shipped oracle constants.
inline constexpr std::uint64_t kOracleSeed = 20160101;

struct OracleConstants {
    std::string dgp;
    std::size_t M = 0;
    std::uint64_t seed = 0;
    MonteCarloValue psi0;
    MonteCarloValue bound;
};

/// The shipped constants for "d1" and "d3" (see data/oracle_constants.txt).
const std::vector<OracleConstants>& frozen_oracle_constants();
std::optional<OracleConstants> frozen_oracle(const std::string& dgp);

OracleConstants compute_oracle_constants(const Dgp& dgp, std::size_t M, std::uint64_t seed,
                                         unsigned threads = 1);
void write_oracle_constants(std::ostream& out, const std::vector<OracleConstants>& constants);
std::vector<OracleConstants> read_oracle_constants(std::istream& in);

enum class CoverageVariance {
    MonteCarlo,  // sd of the estimates across replicates of the cell
    Bound,       // sqrt(efficiency bound / n)
};

struct SimGridConfig {
    Dgp dgp = dgp_d1();
    std::vector<std::size_t> n_list{1000};
    std::vector<double> p_grid{0.5};
    std::vector<double> q_grid{0.5};
    int replicates = 1000;
    std::vector<EstimatorKind> estimators{EstimatorKind::Tmle1, EstimatorKind::Tmle1Star,
                                          EstimatorKind::Tmle2};
    std::uint64_t master_seed = 1;
    unsigned threads = 1;
    KernelSpec kernel;
    BandwidthChoice bandwidth;  // the default rule unless overridden
    FluctuationMode fluctuation = FluctuationMode::Covariate;
    Truncation truncation;
    CoverageVariance coverage = CoverageVariance::MonteCarlo;
    PerturbationScope perturbation = PerturbationScope::PerUnit;
    double z = 1.96;
    /// Truth used for scoring; taken from the frozen constants when absent.
    std::optional<double> psi0;
    std::optional<double> bound;

    void validate() const;
};

struct MetricsRow {
    EstimatorKind estimator = EstimatorKind::Tmle1;
    std::size_t n = 0;
    double p = 0.0;
    double q = 0.0;
    double sqrt_n_abs_bias = 0.0;
    double rvar = 0.0;
    double rvar_trimmed = 0.0;  // 1% dropped from each tail
    double coverage = 0.0;
    double coverage_mc_se = 0.0;
    std::size_t failures = 0;
    std::size_t replicates = 0;  // successful replicates scored
    bool flagged = false;        // more than 2% of replicates failed
};

/// Estimates for every replicate of one (estimator, n, p, q) cell; empty entries failed.
struct CellEstimates {
    EstimatorKind estimator;
    std::size_t n;
    double p;
    double q;
    std::vector<std::optional<double>> psi;
};

struct GridResult {
    std::vector<MetricsRow> rows;  // n, then p, then q, then estimator order
    std::vector<CellEstimates> cells;
    double psi0 = 0.0;
    double bound = 0.0;
};

GridResult run_grid(const SimGridConfig& config);

/// Scores one cell of replicate estimates against the truth.
MetricsRow score_cell(EstimatorKind estimator, std::size_t n, double p, double q,
                      const std::vector<std::optional<double>>& psi, double psi0, double bound,
                      CoverageVariance coverage, double z);

/// CSV with columns estimator,n,p,q,sqrt_n_abs_bias,rvar,coverage,coverage_mc_se,failures.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
/// Blocks for sqrt(n)|bias|, rVar, trimmed rVar and coverage; rows (p, q), columns estimator x n.
void write_metrics_table(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace sotmle
