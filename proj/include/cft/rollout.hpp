#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <cft/graph.hpp>
#include <cft/tensor.hpp>

namespace cft {

// Per-patch importance for one stream. importance is a probability vector
// over patch positions (class token excluded).
struct RolloutResult {
    Tensor<double> importance;
    std::string stream;
};

// Head-averaged [T x T] map per block, pulled out of a finished forward pass.
// Averaging happens in double regardless of the training scalar.
template <typename S>
std::vector<Tensor<double>> head_averaged_attention(
    const Graph<S>& g, const std::vector<std::vector<typename Graph<S>::NodeId>>& block_attn) {
    std::vector<Tensor<double>> maps;
    maps.reserve(block_attn.size());
    for (const auto& heads : block_attn) {
        if (heads.empty()) throw std::invalid_argument("head_averaged_attention: block with no heads");
        const Tensor<S>& first = g.value(heads[0]);
        Tensor<double> avg(first.shape);
        for (const auto id : heads) {
            const Tensor<S>& a = g.value(id);
            if (a.shape != first.shape)
                throw std::invalid_argument("head_averaged_attention: head shape " +
                                            shape_str(a.shape) + " vs " + shape_str(first.shape));
            for (std::size_t i = 0; i < a.data.size(); ++i)
                avg.data[i] += static_cast<double>(a.data[i]);
        }
        const double inv = 1.0 / static_cast<double>(heads.size());
        for (auto& v : avg.data) v *= inv;
        maps.push_back(std::move(avg));
    }
    return maps;
}

// Attention rollout over one stream's self-attention maps. Each layer map is
// mixed with identity (0.5 A + 0.5 I) for the residual path and row-
// renormalized, later layers left-multiply earlier ones, and the class-token
// row over patch columns is renormalized into the importance vector. Rows or
// class slices with zero mass fall back to uniform so the output is always a
// probability vector.
inline RolloutResult attention_rollout(const std::vector<Tensor<double>>& attn_maps,
                                       std::string stream = {}) {
    if (attn_maps.empty()) throw std::invalid_argument("attention_rollout: no attention maps");
    const Shape want = attn_maps[0].shape;
    if (want.size() != 2 || want[0] != want[1] || want[0] < 2)
        throw std::invalid_argument("attention_rollout: want square maps with >= 2 tokens, got " +
                                    shape_str(want));
    const std::size_t t = want[0];

    // rollout accumulates left-multiplications starting from identity
    Tensor<double> roll({t, t});
    for (std::size_t i = 0; i < t; ++i) roll.data[i * t + i] = 1.0;

    Tensor<double> mixed({t, t});
    Tensor<double> next({t, t});
    for (const auto& a : attn_maps) {
        if (a.shape != want)
            throw std::invalid_argument("attention_rollout: map " + shape_str(a.shape) + " vs " +
                                        shape_str(want));
        for (std::size_t r = 0; r < t; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < t; ++c) {
                const double v = 0.5 * a.data[r * t + c] + (r == c ? 0.5 : 0.0);
                mixed.data[r * t + c] = v;
                sum += v;
            }
            if (sum == 0.0) {
                for (std::size_t c = 0; c < t; ++c) mixed.data[r * t + c] = 1.0 / double(t);
            } else {
                for (std::size_t c = 0; c < t; ++c) mixed.data[r * t + c] /= sum;
            }
        }
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t c = 0; c < t; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t; ++k)
                    acc += mixed.data[r * t + k] * roll.data[k * t + c];
                next.data[r * t + c] = acc;
            }
        std::swap(roll, next);
    }

    RolloutResult res;
    res.stream = std::move(stream);
    res.importance = Tensor<double>({t - 1});
    double mass = 0.0;
    for (std::size_t c = 1; c < t; ++c) mass += roll.data[c];  // class-token row
    if (mass == 0.0) {
        for (auto& v : res.importance.data) v = 1.0 / double(t - 1);
    } else {
        for (std::size_t c = 1; c < t; ++c) res.importance.data[c - 1] = roll.data[c] / mass;
    }
    return res;
}

// Importance rendered as a binary PGM: min-max mapped to [0,255], each patch
// cell expanded to an upscale x upscale block. Constant importance renders
// all-zero. Byte-exact for fixed input.
inline std::string render_pgm(const RolloutResult& r, std::size_t grid_h, std::size_t grid_w,
                              std::size_t upscale) {
    if (grid_h == 0 || grid_w == 0 || upscale == 0)
        throw std::invalid_argument("render_pgm: zero grid or upscale");
    const std::size_t n = r.importance.data.size();
    if (n != grid_h * grid_w)
        throw std::invalid_argument("render_pgm: " + std::to_string(n) + " patches vs grid " +
                                    std::to_string(grid_h) + "x" + std::to_string(grid_w));

    double lo = r.importance.data[0], hi = r.importance.data[0];
    for (const double v : r.importance.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<std::uint8_t> cell(n, 0);
    if (hi > lo) {
        for (std::size_t i = 0; i < n; ++i)
            cell[i] = static_cast<std::uint8_t>(
                std::lround((r.importance.data[i] - lo) / (hi - lo) * 255.0));
    }

    const std::size_t w = grid_w * upscale, h = grid_h * upscale;
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + w * h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            out.push_back(static_cast<char>(cell[(y / upscale) * grid_w + (x / upscale)]));
    return out;
}

}  // namespace cft
