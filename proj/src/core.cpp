#include "sotmle/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sotmle {

double expit(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double Truncation::clamp_g(double g) const { return std::clamp(g, g_floor, 1.0); }

double Truncation::clamp_qbar(double q) { return std::clamp(q, kQbarFloor, 1.0 - kQbarFloor); }

void CompensatedSum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
        carry_ += (sum_ - t) + x;
    } else {
        carry_ += (x - t) + sum_;
    }
    sum_ = t;
}

double compensated_mean(std::span<const double> values) {
    if (values.empty()) {
        throw TmleError("empty dataset");
    }
    CompensatedSum acc;
    for (double v : values) {
        acc.add(v);
    }
    return acc.value() / static_cast<double>(values.size());
}

Dataset::Dataset(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw TmleError("covariate dimension must be at least 1");
    }
}

void Dataset::add(std::span<const double> w, int a, std::optional<double> y) {
    if (w.size() != dim_) {
        throw TmleError("covariate dimension mismatch: expected " + std::to_string(dim_) +
                        ", got " + std::to_string(w.size()));
    }
    for (double v : w) {
        if (!std::isfinite(v)) {
            throw TmleError("non-finite covariate");
        }
    }
    if (a != 0 && a != 1) {
        throw TmleError("missingness indicator must be 0 or 1");
    }
    if (a == 0 && y.has_value()) {
        throw TmleError("outcome present for unit with a = 0");
    }
    if (a == 1 && !y.has_value()) {
        throw TmleError("missing outcome for observed unit");
    }
    if (y && (!std::isfinite(*y) || *y < 0.0 || *y > 1.0)) {
        throw TmleError("outcome must lie in [0, 1]; rescale first");
    }
    w_.insert(w_.end(), w.begin(), w.end());
    a_.push_back(a);
    y_.push_back(y.value_or(std::numeric_limits<double>::quiet_NaN()));
}

double Dataset::y(std::size_t i) const {
    if (a_[i] != 1) {
        throw TmleError("outcome requested for unit with a = 0");
    }
    return y_[i];
}

std::optional<double> Dataset::outcome(std::size_t i) const {
    if (a_[i] != 1) {
        return std::nullopt;
    }
    return y_[i];
}

std::size_t Dataset::observed_count() const {
    return static_cast<std::size_t>(std::count(a_.begin(), a_.end(), 1));
}

double Dataset::mean_a() const {
    if (empty()) {
        throw TmleError("empty dataset");
    }
    return static_cast<double>(observed_count()) / static_cast<double>(size());
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out(dim_);
    out.w_.reserve(idx.size() * dim_);
    out.a_.reserve(idx.size());
    out.y_.reserve(idx.size());
    for (std::size_t i : idx) {
        if (i >= size()) {
            throw TmleError("subset index out of range");
        }
        auto row = w(i);
        out.w_.insert(out.w_.end(), row.begin(), row.end());
        out.a_.push_back(a_[i]);
        out.y_.push_back(y_[i]);
    }
    return out;
}

Dataset Dataset::with_indicator(std::span<const int> a) const {
    if (a.size() != size()) {
        throw TmleError("indicator length mismatch");
    }
    Dataset out(dim_);
    for (std::size_t i = 0; i < size(); ++i) {
        if (a[i] == 1 && a_[i] != 1) {
            throw TmleError("indicator selects a unit without an outcome (row " +
                            std::to_string(i) + ")");
        }
        out.add(w(i), a[i], a[i] == 1 ? std::optional<double>(y_[i]) : std::nullopt);
    }
    return out;
}

void Dataset::require_estimable() const {
    if (empty()) {
        throw TmleError("empty dataset");
    }
    if (observed_count() == 0) {
        throw TmleError("no observed outcomes; outcome regression is unidentifiable");
    }
}

NuisancePair truncated(const NuisancePair& nuisance, const Truncation& trunc) {
    return {[q = nuisance.qbar](std::span<const double> w) { return Truncation::clamp_qbar(q(w)); },
            [g = nuisance.g, trunc](std::span<const double> w) { return trunc.clamp_g(g(w)); }};
}

double plugin_mean(const Dataset& data, const Predictor& qbar) {
    if (data.empty()) {
        throw TmleError("empty dataset");
    }
    CompensatedSum acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        acc.add(qbar(data.w(i)));
    }
    return acc.value() / static_cast<double>(data.size());
}

double eif_d1(int a, double y, double qbar_w, double g_w, double psi) {
    if (!(g_w > 0.0)) {
        throw TmleError("positivity violation");
    }
    const double weighted_residual = a == 1 ? (y - qbar_w) / g_w : 0.0;
    return weighted_residual + qbar_w - psi;
}

double eif_d1(const Observation& obs, const NuisancePair& nuisance, double psi) {
    if (obs.a == 1 && !obs.y) {
        throw TmleError("missing outcome for observed unit");
    }
    return eif_d1(obs.a, obs.y.value_or(0.0), nuisance.qbar(obs.w), nuisance.g(obs.w), psi);
}

namespace {

template <typename Integrand>
double weighted_average(std::span<const WeightedPoint> points, Integrand&& f) {
    if (points.empty()) {
        throw TmleError("no evaluation points");
    }
    CompensatedSum num;
    CompensatedSum den;
    for (const auto& pt : points) {
        num.add(pt.weight * f(std::span<const double>(pt.w)));
        den.add(pt.weight);
    }
    if (!(den.value() > 0.0)) {
        throw TmleError("evaluation weights must have positive total");
    }
    return num.value() / den.value();
}

}  // namespace

double remainder_r2(std::span<const WeightedPoint> points, const NuisancePair& nuisance,
                    const NuisancePair& truth) {
    return weighted_average(points, [&](std::span<const double> w) {
        const double g = nuisance.g(w);
        if (!(g > 0.0)) {
            throw TmleError("positivity violation");
        }
        return (1.0 - truth.g(w) / g) * (nuisance.qbar(w) - truth.qbar(w));
    });
}

double remainder_r3(std::span<const WeightedPoint> points, const NuisancePair& nuisance,
                    const Predictor& density_ratio, const NuisancePair& truth) {
    return weighted_average(points, [&](std::span<const double> w) {
        const double g = nuisance.g(w);
        if (!(g > 0.0)) {
            throw TmleError("positivity violation");
        }
        const double g_ratio = truth.g(w) / g;
        return (1.0 - g_ratio * density_ratio(w)) * (1.0 - g_ratio) *
               (nuisance.qbar(w) - truth.qbar(w));
    });
}

std::mt19937_64 make_stream(std::uint64_t master_seed, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(2 * (keys.size() + 1));
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(master_seed);
    for (auto k : keys) {
        push(k);
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

}  // namespace sotmle
