#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cft/graph.hpp"
#include "cft/init.hpp"
#include "cft/ops.hpp"

namespace cft {

/// Projection weights for one multi-head attention: W^Q, W^K, W^V map the
/// source dim to the attention dim d, W^O maps d back out. All four are
/// bias-free; biases live in the surrounding FFN and embedding layers.
template <typename S>
struct AttentionParams {
    Param<S> wq, wk, wv, wo;

    static AttentionParams init(const std::string& prefix, std::size_t q_dim, std::size_t kv_dim,
                                std::size_t d, std::size_t out_dim, std::uint64_t seed) {
        AttentionParams p;
        auto make = [&](const char* leaf, std::size_t r, std::size_t c) {
            const std::string name = prefix + "." + leaf;
            Rng rng = group_rng(seed, name);
            return Param<S>(name, xavier_uniform<S>(rng, r, c));
        };
        p.wq = make("wq", q_dim, d);
        p.wk = make("wk", kv_dim, d);
        p.wv = make("wv", kv_dim, d);
        p.wo = make("wo", d, out_dim);
        return p;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&wq);
        out.push_back(&wk);
        out.push_back(&wv);
        out.push_back(&wo);
    }
};

template <typename S>
struct AttentionOut {
    typename Graph<S>::NodeId out;                          // [T_q x out_dim]
    std::vector<typename Graph<S>::NodeId> head_attn;       // per head, [T_q x T_kv]
};

/// Q = q_src W^Q, K = kv_src W^K, V = kv_src W^V; per head n,
/// A_n = softmax(Q_n K_nᵀ / sqrt(d / n_heads)), H_n = A_n V_n; the heads are
/// concatenated and projected by W^O. q_src == kv_src gives self-attention.
template <typename S>
AttentionOut<S> multi_head_attention(Graph<S>& g, typename Graph<S>::NodeId q_src,
                                     typename Graph<S>::NodeId kv_src, AttentionParams<S>& p,
                                     std::size_t n_heads) {
    using NodeId = typename Graph<S>::NodeId;
    const std::size_t d = p.wq.value.cols();
    const S inv_scale = S(1) / static_cast<S>(attention_scale(static_cast<double>(d), n_heads));
    const std::size_t dh = d / n_heads;

    const NodeId q = g.matmul(q_src, g.param(p.wq));
    const NodeId k = g.matmul(kv_src, g.param(p.wk));
    const NodeId v = g.matmul(kv_src, g.param(p.wv));

    AttentionOut<S> res;
    std::vector<NodeId> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const NodeId qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        const NodeId kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        const NodeId vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        const NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_scale);
        const NodeId attn = g.softmax_last(scores);
        res.head_attn.push_back(attn);
        heads.push_back(g.matmul(attn, vh));
    }
    const NodeId cat = n_heads == 1 ? heads[0] : g.concat_cols(heads);
    res.out = g.matmul(cat, g.param(p.wo));
    return res;
}

/// Snapshot of one block's attention as a [n_heads x T_q x T_kv] value.
template <typename S>
Tensor<S> stack_attention(const Graph<S>& g, const std::vector<typename Graph<S>::NodeId>& head_attn) {
    const Tensor<S>& first = g.value(head_attn[0]);
    const std::size_t tq = first.rows(), tk = first.cols();
    Tensor<S> out({head_attn.size(), tq, tk});
    for (std::size_t h = 0; h < head_attn.size(); ++h) {
        const Tensor<S>& a = g.value(head_attn[h]);
        std::copy(a.data.begin(), a.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(h * tq * tk));
    }
    return out;
}

}  // namespace cft
