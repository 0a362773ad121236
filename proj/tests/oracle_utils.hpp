#pragma once

// Independent reference implementations used as oracles by the tests. These
// deliberately avoid the library's own code paths: straight-line long double
// arithmetic, a series erf, and central finite differences.

#include <cmath>
#include <cstddef>
#include <vector>

#include "cft/graph.hpp"
#include "cft/rng.hpp"
#include "cft/tensor.hpp"

namespace oracle {

// |a - n| / max(|a|, |n|); both tiny counts as exact agreement.
inline double rel_err(double a, double n) {
    const double da = std::abs(a), dn = std::abs(n);
    if (da < 1e-10 && dn < 1e-10) return 0.0;
    return std::abs(a - n) / std::max(da, dn);
}

// Maclaurin series for erf, no std::erf involved. Converges for the |x| <= 4
// range the tests use.
inline long double erf_series(long double x) {
    const long double two_over_sqrt_pi = 1.1283791670955125738961589031215L;
    long double term = x;
    long double sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        const long double add = term / (2 * n + 1);
        sum += add;
        if (std::abs(add) < 1e-30L) break;
    }
    return two_over_sqrt_pi * sum;
}

inline long double normal_cdf(long double x) {
    return 0.5L * (1.0L + erf_series(x / std::sqrt(2.0L)));
}

inline std::vector<long double> softmax_ref(const std::vector<long double>& z) {
    long double m = z[0];
    for (long double v : z) m = std::max(m, v);
    std::vector<long double> p(z.size());
    long double sum = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline long double cross_entropy_ref(const std::vector<long double>& z, std::size_t label) {
    return -std::log(softmax_ref(z)[label]);
}

inline std::vector<long double> layer_norm_ref(const std::vector<long double>& x,
                                               const std::vector<long double>& gamma,
                                               const std::vector<long double>& beta, long double eps) {
    const std::size_t n = x.size();
    long double mean = 0;
    for (long double v : x) mean += v;
    mean /= n;
    long double var = 0;
    for (long double v : x) var += (v - mean) * (v - mean);
    var /= n;
    std::vector<long double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = gamma[i] * (x[i] - mean) / std::sqrt(var + eps) + beta[i];
    return y;
}

// Plain triple loop, no zero-skip, long double accumulators.
inline std::vector<long double> matmul_ref(const std::vector<long double>& a,
                                           const std::vector<long double>& b, std::size_t m,
                                           std::size_t p, std::size_t n) {
    std::vector<long double> c(m * n, 0.0L);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < p; ++k) c[i * n + j] += a[i * p + k] * b[k * n + j];
    return c;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t coords = 0;
    std::size_t bad = 0;  // coords with rel err >= threshold
};

enum class Stencil { central3, central5 };

// Finite-difference check of every coordinate of every listed parameter.
// The builder must construct the forward pass from the parameters' current
// values and return the scalar loss node. central3 is the h^2 two-point
// stencil; central5 is the h^4 five-point stencil for compositions whose
// curvature makes central3 truncation visible.
template <typename Builder>
GradCheck finite_diff_check(const std::vector<cft::Param<double>*>& params, Builder build,
                            double h = 1e-4, double threshold = 1e-6,
                            Stencil stencil = Stencil::central3) {
    auto eval = [&]() {
        cft::Graph<double> g;
        const auto loss = build(g);
        return g.value(loss).data[0];
    };
    for (auto* p : params) p->zero_grad();
    {
        cft::Graph<double> g;
        const auto loss = build(g);
        g.backward(loss);
    }
    GradCheck r;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double keep = p->value.data[i];
            auto at = [&](double delta) {
                p->value.data[i] = keep + delta;
                return eval();
            };
            double numeric;
            if (stencil == Stencil::central3) {
                numeric = (at(h) - at(-h)) / (2.0 * h);
            } else {
                numeric = (at(-2 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2 * h)) / (12.0 * h);
            }
            p->value.data[i] = keep;
            const double e = rel_err(p->grad.data[i], numeric);
            r.max_rel = std::max(r.max_rel, e);
            if (e >= threshold) ++r.bad;
            ++r.coords;
        }
    }
    return r;
}

inline cft::Tensor<double> random_tensor(cft::Rng& rng, cft::Shape shape, double lo = -1.0,
                                         double hi = 1.0) {
    cft::Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace oracle
