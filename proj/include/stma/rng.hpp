#pragma once

#include "stma/tensor.hpp"

#include <random>

namespace stma {

using Rng = std::mt19937_64;

inline Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

inline Tensor random_uniform(std::vector<std::size_t> shape, Rng& rng, double lo = 0.0,
                             double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace stma
