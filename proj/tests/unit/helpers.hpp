#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "sotmle/core.hpp"

namespace testing {

// Covariates uniform on [-1, 1]^d, A ~ Bernoulli(expit(0.4 + w1)), Y ~ Uniform(0, 1) if observed.
inline sotmle::Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                      bool binary_y = false) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    sotmle::Dataset data(d);
    std::vector<double> w(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : w) x = unif(rng);
        const int a = u01(rng) < sotmle::expit(0.4 + w[0]) ? 1 : 0;
        std::optional<double> y;
        if (a == 1) y = binary_y ? (u01(rng) < sotmle::expit(w[0] - 0.3) ? 1.0 : 0.0) : u01(rng);
        data.add(w, a, y);
    }
    return data;
}

// Logistic predictors with random coefficients of moderate size.
inline sotmle::NuisancePair random_nuisance(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> norm(0.0, 0.6);
    std::vector<double> bq(d + 1);
    std::vector<double> bg(d + 1);
    for (auto& b : bq) b = norm(rng);
    for (auto& b : bg) b = norm(rng);
    bg[0] += 0.8;
    auto make = [](std::vector<double> b) {
        return [b](std::span<const double> w) {
            double eta = b[0];
            for (std::size_t j = 0; j < w.size(); ++j) eta += b[j + 1] * w[j];
            return sotmle::expit(eta);
        };
    };
    return {make(bq), make(bg)};
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

}  // namespace testing
