#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sotmle/core.hpp"

namespace sotmle {

enum class KernelFamily { Gaussian, Epanechnikov, GaussianOrder4, Discrete };

/// Kernel family plus its order m0 (highest polynomial degree the kernel is orthogonal to).
struct KernelSpec {
    KernelFamily family = KernelFamily::Gaussian;

    int order() const;
    bool signed_weights() const { return family == KernelFamily::GaussianOrder4; }
    std::string name() const;

    static KernelSpec parse(std::string_view name);
};

/// Positive smoothing bandwidth; one entry broadcasts to every dimension.
class Bandwidth {
public:
    Bandwidth() : values_{1.0} {}
    Bandwidth(double h);  // NOLINT(google-explicit-constructor)
    explicit Bandwidth(std::vector<double> values);

    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t j) const { return values_.size() == 1 ? values_[0] : values_[j]; }
    const std::vector<double>& values() const { return values_; }
    Bandwidth scaled(double factor) const;
    std::string to_string() const;

    friend bool operator==(const Bandwidth&, const Bandwidth&) = default;

private:
    std::vector<double> values_;
};

/// Univariate kernel k(u).
double kernel_1d(double u, KernelFamily family);

/// Product kernel prod_j k(u_j / h_j) / h_j; the discrete kernel is 1{u = 0}.
double kernel_eval(std::span<const double> u, const KernelSpec& spec, const Bandwidth& h);

struct NwEstimate {
    double value = 0.0;
    bool fallback = false;  // no kernel mass; value is the global mean of the response
};

/// Nadaraya-Watson smoother of a response over a fixed point cloud (n points of dimension d).
class NadarayaWatson {
public:
    NadarayaWatson(std::vector<double> points, std::size_t dim, std::vector<double> response,
                   KernelSpec spec, Bandwidth h);

    /// Raw sums sum_j K(x_i - x_j) r_j and sum_j K(x_i - x_j) at every stored point.
    struct Sums {
        std::vector<double> weighted;
        std::vector<double> total;
    };

    NwEstimate operator()(std::span<const double> at) const;
    Sums sums_at_points(bool leave_one_out = false) const;
    /// Smoother evaluated at every stored point; optionally leaving the point itself out.
    std::vector<NwEstimate> at_points(bool leave_one_out = false) const;

    std::size_t size() const { return response_.size(); }
    std::size_t dim() const { return dim_; }
    const Bandwidth& bandwidth() const { return h_; }

private:
    double weight(std::span<const double> a, std::span<const double> b) const;
    NwEstimate finish(double num, double den) const;

    std::vector<double> points_;
    std::size_t dim_;
    std::vector<double> response_;
    KernelSpec spec_;
    Bandwidth h_;
    std::vector<double> inv_h_;
    double norm_;
    double global_mean_;
};

/// Kernel regression of A on the covariates, evaluated at w.
NwEstimate nw_regress_covariates(std::span<const double> w, const Dataset& data,
                                 const KernelSpec& spec, const Bandwidth& h);

/// Kernel regression of A on the estimated score ghat(W), evaluated at w.
NwEstimate nw_regress_score(std::span<const double> w, const Predictor& ghat, const Dataset& data,
                            const KernelSpec& spec, const Bandwidth& h);

inline constexpr double kDensityFloor = 1e-4;

/// Kernel density estimate (1/n) sum_i K_h(w - W_i), floored at `floor`.
double kde_density(std::span<const double> w, const Dataset& data, const KernelSpec& spec,
                   const Bandwidth& h, double floor = kDensityFloor);

enum class SmoothingTarget { Covariates, ScoreValues };

/// Scott-type rule h_j = sd_j * n^(-1/(4+d)) * (4/(d+2))^(1/(d+4)) for an n x d point cloud.
Bandwidth rule_of_thumb_bandwidth(std::span<const double> points, std::size_t dim);

/// Default bandwidth for smoothing on the covariates or on the score values ghat(W_i).
Bandwidth default_bandwidth(const Dataset& data, SmoothingTarget target,
                            const Predictor* ghat = nullptr);

/// `count` log-spaced multiples of `base` from `lo` x to `hi` x.
std::vector<Bandwidth> default_candidate_grid(const Bandwidth& base, int count = 10,
                                              double lo = 0.25, double hi = 4.0);

/// Fold label in [0, folds) for each of n units; deterministic in (n, folds, seed).
std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed);

}  // namespace sotmle
