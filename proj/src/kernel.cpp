#include "sotmle/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace sotmle {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

void check_dims(const Bandwidth& h, std::size_t dim) {
    if (h.size() != 1 && h.size() != dim) {
        throw TmleError("bandwidth has " + std::to_string(h.size()) + " entries for dimension " +
                        std::to_string(dim));
    }
}

}  // namespace

int KernelSpec::order() const {
    switch (family) {
        case KernelFamily::GaussianOrder4:
            return 3;
        case KernelFamily::Discrete:
            // exact stratification has no representation error
            return 0;
        default:
            return 1;
    }
}

std::string KernelSpec::name() const {
    switch (family) {
        case KernelFamily::Gaussian:
            return "gaussian";
        case KernelFamily::Epanechnikov:
            return "epanechnikov";
        case KernelFamily::GaussianOrder4:
            return "gaussian4";
        case KernelFamily::Discrete:
            return "discrete";
    }
    return "unknown";
}

KernelSpec KernelSpec::parse(std::string_view name) {
    if (name == "gaussian") return {KernelFamily::Gaussian};
    if (name == "epanechnikov") return {KernelFamily::Epanechnikov};
    if (name == "gaussian4") return {KernelFamily::GaussianOrder4};
    if (name == "discrete") return {KernelFamily::Discrete};
    throw TmleError("unknown kernel '" + std::string(name) + "'");
}

Bandwidth::Bandwidth(double h) : Bandwidth(std::vector<double>{h}) {}

Bandwidth::Bandwidth(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw TmleError("bandwidth must have at least one entry");
    }
    for (double v : values_) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw TmleError("bandwidth entries must be positive and finite");
        }
    }
}

Bandwidth Bandwidth::scaled(double factor) const {
    std::vector<double> out = values_;
    for (double& v : out) {
        v *= factor;
    }
    return Bandwidth(std::move(out));
}

std::string Bandwidth::to_string() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t j = 0; j < values_.size(); ++j) {
        if (j) os << ';';
        os << values_[j];
    }
    return os.str();
}

double kernel_1d(double u, KernelFamily family) {
    switch (family) {
        case KernelFamily::Gaussian:
            return kInvSqrt2Pi * std::exp(-0.5 * u * u);
        case KernelFamily::Epanechnikov:
            return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
        case KernelFamily::GaussianOrder4:
            return 0.5 * (3.0 - u * u) * kInvSqrt2Pi * std::exp(-0.5 * u * u);
        case KernelFamily::Discrete:
            return u == 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

double kernel_eval(std::span<const double> u, const KernelSpec& spec, const Bandwidth& h) {
    check_dims(h, u.size());
    if (spec.family == KernelFamily::Discrete) {
        return std::all_of(u.begin(), u.end(), [](double x) { return x == 0.0; }) ? 1.0 : 0.0;
    }
    double k = 1.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        k *= kernel_1d(u[j] / h[j], spec.family) / h[j];
    }
    return k;
}

NadarayaWatson::NadarayaWatson(std::vector<double> points, std::size_t dim,
                               std::vector<double> response, KernelSpec spec, Bandwidth h)
    : points_(std::move(points)),
      dim_(dim),
      response_(std::move(response)),
      spec_(spec),
      h_(std::move(h)) {
    if (dim_ == 0 || points_.size() != dim_ * response_.size()) {
        throw TmleError("point cloud shape does not match response length");
    }
    if (response_.empty()) {
        throw TmleError("empty dataset");
    }
    check_dims(h_, dim_);
    inv_h_.resize(dim_);
    norm_ = 1.0;
    for (std::size_t j = 0; j < dim_; ++j) {
        inv_h_[j] = 1.0 / h_[j];
        norm_ *= inv_h_[j];
    }
    if (spec_.family == KernelFamily::Gaussian) {
        norm_ *= std::pow(kInvSqrt2Pi, static_cast<double>(dim_));
    }
    global_mean_ = compensated_mean(response_);
}

double NadarayaWatson::weight(std::span<const double> a, std::span<const double> b) const {
    switch (spec_.family) {
        case KernelFamily::Gaussian: {
            double q = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                const double z = (a[j] - b[j]) * inv_h_[j];
                q += z * z;
            }
            return norm_ * std::exp(-0.5 * q);
        }
        case KernelFamily::Discrete:
            for (std::size_t j = 0; j < dim_; ++j) {
                if (a[j] != b[j]) return 0.0;
            }
            return 1.0;
        default: {
            double k = norm_;
            for (std::size_t j = 0; j < dim_ && k != 0.0; ++j) {
                k *= kernel_1d((a[j] - b[j]) * inv_h_[j], spec_.family);
            }
            return k;
        }
    }
}

NwEstimate NadarayaWatson::finish(double num, double den) const {
    if (!(den > 0.0) || !std::isfinite(den) || !std::isfinite(num)) {
        return {global_mean_, true};
    }
    double value = num / den;
    if (spec_.signed_weights()) {
        value = std::clamp(value, 0.0, 1.0);
    }
    return {value, false};
}

NwEstimate NadarayaWatson::operator()(std::span<const double> at) const {
    if (at.size() != dim_) {
        throw TmleError("query dimension mismatch");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < response_.size(); ++i) {
        const double k = weight(at, {points_.data() + i * dim_, dim_});
        num += k * response_[i];
        den += k;
    }
    return finish(num, den);
}

NadarayaWatson::Sums NadarayaWatson::sums_at_points(bool leave_one_out) const {
    const std::size_t n = response_.size();
    std::vector<double> num(n, 0.0);
    std::vector<double> den(n, 0.0);
    // symmetric kernel: each unordered pair is visited once
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> wi{points_.data() + i * dim_, dim_};
        if (!leave_one_out) {
            const double k0 = weight(wi, wi);
            num[i] += k0 * response_[i];
            den[i] += k0;
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            const double k = weight(wi, {points_.data() + j * dim_, dim_});
            if (k == 0.0) continue;
            num[i] += k * response_[j];
            den[i] += k;
            num[j] += k * response_[i];
            den[j] += k;
        }
    }
    return {std::move(num), std::move(den)};
}

std::vector<NwEstimate> NadarayaWatson::at_points(bool leave_one_out) const {
    const Sums sums = sums_at_points(leave_one_out);
    std::vector<NwEstimate> out(sums.total.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = finish(sums.weighted[i], sums.total[i]);
    }
    return out;
}

namespace {

std::vector<double> indicator_values(const Dataset& data) {
    std::vector<double> a(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        a[i] = data.a(i);
    }
    return a;
}

std::vector<double> score_values(const Predictor& ghat, const Dataset& data) {
    std::vector<double> s(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        s[i] = ghat(data.w(i));
    }
    return s;
}

}  // namespace

NwEstimate nw_regress_covariates(std::span<const double> w, const Dataset& data,
                                 const KernelSpec& spec, const Bandwidth& h) {
    auto cloud = data.covariate_matrix();
    NadarayaWatson nw({cloud.begin(), cloud.end()}, data.dim(), indicator_values(data), spec, h);
    return nw(w);
}

NwEstimate nw_regress_score(std::span<const double> w, const Predictor& ghat, const Dataset& data,
                            const KernelSpec& spec, const Bandwidth& h) {
    if (h.size() != 1) {
        throw TmleError("score smoothing takes a scalar bandwidth");
    }
    NadarayaWatson nw(score_values(ghat, data), 1, indicator_values(data), spec, h);
    const double at = ghat(w);
    return nw(std::span<const double>(&at, 1));
}

double kde_density(std::span<const double> w, const Dataset& data, const KernelSpec& spec,
                   const Bandwidth& h, double floor) {
    if (data.empty()) {
        throw TmleError("empty dataset");
    }
    check_dims(h, data.dim());
    if (w.size() != data.dim()) {
        throw TmleError("query dimension mismatch");
    }
    std::vector<double> u(data.dim());
    CompensatedSum acc;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto wi = data.w(i);
        for (std::size_t j = 0; j < u.size(); ++j) {
            u[j] = w[j] - wi[j];
        }
        acc.add(kernel_eval(u, spec, h));
    }
    return std::max(acc.value() / static_cast<double>(data.size()), floor);
}

Bandwidth rule_of_thumb_bandwidth(std::span<const double> points, std::size_t dim) {
    if (dim == 0 || points.size() % dim != 0) {
        throw TmleError("point cloud shape mismatch");
    }
    const std::size_t n = points.size() / dim;
    if (n < 2) {
        throw TmleError("bandwidth rule needs at least two points");
    }
    const double ds = static_cast<double>(dim);
    const double rate = std::pow(static_cast<double>(n), -1.0 / (4.0 + ds));
    const double constant = std::pow(4.0 / (ds + 2.0), 1.0 / (ds + 4.0));
    std::vector<double> h(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        CompensatedSum s;
        for (std::size_t i = 0; i < n; ++i) s.add(points[i * dim + j]);
        const double mean = s.value() / static_cast<double>(n);
        CompensatedSum ss;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = points[i * dim + j] - mean;
            ss.add(d * d);
        }
        const double sd = std::sqrt(ss.value() / static_cast<double>(n - 1));
        if (!(sd > 0.0)) {
            throw TmleError("degenerate covariate");
        }
        h[j] = sd * rate * constant;
    }
    return Bandwidth(std::move(h));
}

Bandwidth default_bandwidth(const Dataset& data, SmoothingTarget target, const Predictor* ghat) {
    if (target == SmoothingTarget::Covariates) {
        return rule_of_thumb_bandwidth(data.covariate_matrix(), data.dim());
    }
    if (ghat == nullptr || !*ghat) {
        throw TmleError("score-value bandwidth needs a fitted missingness score");
    }
    return rule_of_thumb_bandwidth(score_values(*ghat, data), 1);
}

std::vector<Bandwidth> default_candidate_grid(const Bandwidth& base, int count, double lo,
                                              double hi) {
    if (count < 1 || !(lo > 0.0) || !(hi >= lo)) {
        throw TmleError("invalid bandwidth grid specification");
    }
    std::vector<Bandwidth> grid;
    grid.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double t = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
        grid.push_back(base.scaled(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))));
    }
    return grid;
}

std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed) {
    if (folds < 2) {
        throw TmleError("need at least two folds");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_stream(seed, {n, static_cast<std::uint64_t>(folds)});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> fold(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));
    }
    return fold;
}

}  // namespace sotmle
