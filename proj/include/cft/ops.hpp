#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cft/tensor.hpp"

namespace cft {

enum class Activation { Relu, Gelu };

template <typename S>
inline S relu_value(S x) {
    return x > S(0) ? x : S(0);
}

/// Exact Gaussian-CDF form: x * Phi(x), evaluated through erf.
template <typename S>
inline S gelu_value(S x) {
    const double xd = static_cast<double>(x);
    return static_cast<S>(0.5 * xd * (1.0 + std::erf(xd * M_SQRT1_2)));
}

/// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
template <typename S>
inline S gelu_derivative(S x) {
    const double xd = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
    return static_cast<S>(cdf + xd * pdf);
}

/// Scaling factor of the per-head attention logits: sqrt(d / n_heads).
inline double attention_scale(std::size_t attn_dim, std::size_t n_heads) {
    if (n_heads == 0 || attn_dim % n_heads != 0) {
        throw std::invalid_argument("attention_scale: attn_dim " + std::to_string(attn_dim) +
                                    " not divisible by n_heads " + std::to_string(n_heads));
    }
    return std::sqrt(static_cast<double>(attn_dim) / static_cast<double>(n_heads));
}

/// Max-subtracted softmax of a flat vector.
template <typename S>
std::vector<S> softmax_vector(const std::vector<S>& x) {
    if (x.empty()) throw std::invalid_argument("softmax: empty input");
    S m = x[0];
    for (S v : x) m = std::max(m, v);
    std::vector<S> out(x.size());
    S sum = S(0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

/// log(sum_i exp(x_i)), max-stabilized.
template <typename S>
S log_sum_exp(const std::vector<S>& x) {
    if (x.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    S m = x[0];
    for (S v : x) m = std::max(m, v);
    S sum = S(0);
    for (S v : x) sum += std::exp(v - m);
    return m + std::log(sum);
}

/// Argmax with deterministic lowest-index tie-break.
template <typename S>
std::size_t argmax_lowest(const std::vector<S>& x) {
    if (x.empty()) throw std::invalid_argument("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (x[i] > x[best]) best = i;
    }
    return best;
}

/// Plain matrix product, no autodiff. The graph op delegates here.
template <typename S>
Tensor<S> matmul_value(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                                    shape_str(b.shape));
    }
    const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
    Tensor<S> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
            const S aik = a.data[i * p + k];
            if (aik == S(0)) continue;
            const S* brow = &b.data[k * n];
            S* crow = &c.data[i * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

}  // namespace cft
