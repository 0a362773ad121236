#pragma once

#include <cstdint>
#include <string>

#include "cft/rng.hpp"
#include "cft/tensor.hpp"

namespace cft {

// Draws happen in double and are cast to S so the 32- and 64-bit builds of a
// model start from the same numbers.

template <typename S>
Tensor<S> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<S> t({fan_in, fan_out});
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-a, a));
    return t;
}

template <typename S>
Tensor<S> gaussian_init(Rng& rng, Shape shape, double sigma) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(rng.normal(0.0, sigma));
    return t;
}

/// Every parameter group draws from its own substream keyed by name, so
/// adding or reordering groups never shifts another group's values.
inline Rng group_rng(std::uint64_t seed, const std::string& group) {
    return Rng(Rng::derive(seed, name_hash(group)));
}

}  // namespace cft
