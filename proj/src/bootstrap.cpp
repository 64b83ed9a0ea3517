#include <algorithm>
#include <cmath>

#include "sotmle/estimators.hpp"
#include "sotmle/parallel.hpp"
#include "internal.hpp"

namespace sotmle {

namespace detail {

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::uint64_t replicate) {
    auto rng = make_stream(seed, {replicate, n});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

double sample_sd(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double mean = compensated_mean(values);
    CompensatedSum ss;
    for (double v : values) ss.add((v - mean) * (v - mean));
    return std::sqrt(ss.value() / static_cast<double>(values.size() - 1));
}

// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw TmleError("quantile of empty sample");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

std::vector<std::optional<double>> bootstrap_replicates(const Dataset& data,
                                                        const Pipeline& pipeline, int reps,
                                                        std::uint64_t seed, unsigned threads) {
    if (data.empty()) throw TmleError("empty dataset");
    if (reps < 1) throw TmleError("need at least one bootstrap replicate");
    std::vector<std::optional<double>> out(static_cast<std::size_t>(reps));
    parallel_for(out.size(), threads, [&](std::size_t b) {
        const auto idx = detail::resample_indices(data.size(), seed, b);
        try {
            const double v = pipeline(data.subset(idx));
            if (std::isfinite(v)) out[b] = v;
        } catch (const std::exception&) {
            out[b] = std::nullopt;
        }
    });
    return out;
}

BootstrapResult bootstrap_se(const Dataset& data, const Pipeline& pipeline, int reps,
                             std::uint64_t seed, double level, unsigned threads) {
    if (reps < 100) {
        throw TmleError("bootstrap needs at least 100 replicates");
    }
    const auto raw = bootstrap_replicates(data, pipeline, reps, seed, threads);
    BootstrapResult result;
    for (const auto& r : raw) {
        if (r) {
            result.replicates.push_back(*r);
        } else {
            ++result.failures;
        }
    }
    if (result.failures * 10 > raw.size()) {
        throw TmleError("more than 10% of bootstrap replicates failed (" +
                        std::to_string(result.failures) + " of " + std::to_string(raw.size()) + ")");
    }
    result.se = detail::sample_sd(result.replicates);
    std::vector<double> sorted = result.replicates;
    std::sort(sorted.begin(), sorted.end());
    result.ci_lower = detail::quantile_sorted(sorted, (1.0 - level) / 2.0);
    result.ci_upper = detail::quantile_sorted(sorted, (1.0 + level) / 2.0);
    return result;
}

}  // namespace sotmle
