#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sotmle {

/// Error raised for precondition violations and numerical failures.
class TmleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kQbarFloor = 1e-4;

double expit(double x);
double logit(double p);

/// Probability truncation applied to every nuisance evaluation.
struct Truncation {
    double g_floor = 0.01;   // g clamped to [g_floor, 1]
    double q_floor = 1e-4;   // density estimates clamped below

    double clamp_g(double g) const;
    static double clamp_qbar(double q);
};

/// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    void add(double x);
    double value() const { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

double compensated_mean(std::span<const double> values);

/// Read-only view of one unit: covariates w, indicator a, outcome y (present iff a = 1).
struct Observation {
    std::span<const double> w;
    int a = 0;
    std::optional<double> y;
};

/// Observed-data sample. Covariates are stored row-major.
class Dataset {
public:
    explicit Dataset(std::size_t dim);

    void add(std::span<const double> w, int a, std::optional<double> y);

    std::size_t size() const { return a_.size(); }
    std::size_t dim() const { return dim_; }
    bool empty() const { return a_.empty(); }

    std::span<const double> w(std::size_t i) const { return {w_.data() + i * dim_, dim_}; }
    int a(std::size_t i) const { return a_[i]; }
    bool observed(std::size_t i) const { return a_[i] == 1; }
    /// Outcome of an observed unit; throws if the unit has no outcome.
    double y(std::size_t i) const;
    std::optional<double> outcome(std::size_t i) const;
    Observation operator[](std::size_t i) const { return {w(i), a_[i], outcome(i)}; }

    std::size_t observed_count() const;
    double mean_a() const;

    /// Rows idx[0], idx[1], ... (repeats allowed, as in bootstrap resampling).
    Dataset subset(std::span<const std::size_t> idx) const;
    /// Copy with the indicator replaced; outcomes kept only where the new indicator is 1.
    Dataset with_indicator(std::span<const int> a) const;

    std::span<const double> covariate_matrix() const { return w_; }

    /// Checks the estimation preconditions: n >= 1 and at least one observed outcome.
    void require_estimable() const;

private:
    std::size_t dim_;
    std::vector<double> w_;
    std::vector<int> a_;
    std::vector<double> y_;  // NaN when absent
};

using Predictor = std::function<double(std::span<const double>)>;

/// Outcome regression Qbar(w) = E[Y | A = 1, W = w] and missingness score g(w) = P(A = 1 | W = w).
struct NuisancePair {
    Predictor qbar;
    Predictor g;
};

/// Wraps a pair so that g is floored at trunc.g_floor and Qbar kept inside [1e-4, 1 - 1e-4].
NuisancePair truncated(const NuisancePair& nuisance, const Truncation& trunc);

/// Plug-in functional: empirical mean of qbar over the sample covariates.
double plugin_mean(const Dataset& data, const Predictor& qbar);

/// Efficient influence function of the mean under MAR.
double eif_d1(const Observation& obs, const NuisancePair& nuisance, double psi);
double eif_d1(int a, double y, double qbar_w, double g_w, double psi);

struct WeightedPoint {
    std::vector<double> w;
    double weight = 1.0;
};

/// Second-order remainder of the first-order expansion, integrated over weighted points.
double remainder_r2(std::span<const WeightedPoint> points, const NuisancePair& nuisance,
                    const NuisancePair& truth);

/// Third-order remainder; density_ratio(w) supplies q_W0(w) / q_W(w).
double remainder_r3(std::span<const WeightedPoint> points, const NuisancePair& nuisance,
                    const Predictor& density_ratio, const NuisancePair& truth);

/// Independent stream keyed by (master seed, keys...). Same keys give the same stream.
std::mt19937_64 make_stream(std::uint64_t master_seed, std::initializer_list<std::uint64_t> keys);

}  // namespace sotmle
