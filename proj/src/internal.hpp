#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sotmle::detail {

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::uint64_t replicate);
double sample_sd(std::span<const double> values);
double quantile_sorted(std::span<const double> sorted, double p);

}  // namespace sotmle::detail
