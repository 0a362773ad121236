#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cft/attention.hpp"
#include "cft/graph.hpp"
#include "cft/init.hpp"
#include "cft/vit.hpp"

namespace cft {

enum class Fusion { Max, Mean, Concat };
enum class CfaMode { DualCross, CfpCrossOnly, IfpCrossOnly, SelfAttention, None };

inline const char* to_string(Fusion f) {
    switch (f) {
        case Fusion::Max: return "max";
        case Fusion::Mean: return "mean";
        case Fusion::Concat: return "concat";
    }
    return "?";
}

inline const char* to_string(CfaMode m) {
    switch (m) {
        case CfaMode::DualCross: return "dual_cross";
        case CfaMode::CfpCrossOnly: return "cfp_cross_only";
        case CfaMode::IfpCrossOnly: return "ifp_cross_only";
        case CfaMode::SelfAttention: return "self_attention";
        case CfaMode::None: return "none";
    }
    return "?";
}

inline Fusion fusion_from_string(const std::string& s) {
    if (s == "max") return Fusion::Max;
    if (s == "mean") return Fusion::Mean;
    if (s == "concat") return Fusion::Concat;
    throw std::invalid_argument("fusion: unknown kind '" + s + "' (max|mean|concat)");
}

inline CfaMode cfa_mode_from_string(const std::string& s) {
    if (s == "dual_cross") return CfaMode::DualCross;
    if (s == "cfp_cross_only") return CfaMode::CfpCrossOnly;
    if (s == "ifp_cross_only") return CfaMode::IfpCrossOnly;
    if (s == "self_attention") return CfaMode::SelfAttention;
    if (s == "none") return CfaMode::None;
    throw std::invalid_argument("cfa mode: unknown mode '" + s + "'");
}

/// Fusion-module shape knobs. `projection` toggles the linear projection
/// block; without it the cross attention runs on raw encoder features.
struct CfaConfig {
    std::size_t L = 8;
    std::size_t d = 8;
    std::size_t n_heads = 2;
    Fusion fusion = Fusion::Max;
    CfaMode mode = CfaMode::DualCross;
    bool projection = true;

    void validate() const {
        if (L == 0) throw std::invalid_argument("cfa config: L must be >= 1");
        if (n_heads == 0 || d % n_heads != 0) {
            throw std::invalid_argument("cfa config: d " + std::to_string(d) + " not divisible by " +
                                        std::to_string(n_heads) + " heads");
        }
    }
};

/// linear + LN + ReLU, mapping encoder features to the projected dim L.
template <typename S>
struct ProjectionParams {
    Param<S> w, b, ln_g, ln_b;

    static ProjectionParams init(const std::string& prefix, std::size_t C_e, std::size_t L,
                                 std::uint64_t seed) {
        ProjectionParams p;
        {
            Rng rng = group_rng(seed, prefix + ".w");
            p.w = Param<S>(prefix + ".w", xavier_uniform<S>(rng, C_e, L));
        }
        p.b = Param<S>(prefix + ".b", Tensor<S>::zeros({L}));
        p.ln_g = Param<S>(prefix + ".ln.g", Tensor<S>::full({L}, S(1)));
        p.ln_b = Param<S>(prefix + ".ln.b", Tensor<S>::zeros({L}));
        return p;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
        out.push_back(&ln_g);
        out.push_back(&ln_b);
    }
};

template <typename S>
typename Graph<S>::NodeId linear_project(Graph<S>& g, typename Graph<S>::NodeId f,
                                         ProjectionParams<S>& p) {
    const auto affine = g.add_bias(g.matmul(f, g.param(p.w)), g.param(p.b));
    return g.relu(g.layer_norm(affine, g.param(p.ln_g), g.param(p.ln_b), S(kLayerNormEps)));
}

/// One cross-attention block: multi-head attention on the raw inputs, then
/// residual + LN, then a two-linear GELU FFN with another residual + LN.
/// Post-norm, unlike the pre-norm encoder blocks.
template <typename S>
struct CrossBlockParams {
    AttentionParams<S> attn;
    Param<S> ln1_g, ln1_b;
    Param<S> ff_w1, ff_b1, ff_w2, ff_b2;
    Param<S> ln2_g, ln2_b;

    // q_dim is also the block's output dim (residual on the query stream).
    static CrossBlockParams init(const std::string& prefix, std::size_t q_dim, std::size_t kv_dim,
                                 std::size_t d, std::uint64_t seed) {
        CrossBlockParams p;
        p.attn = AttentionParams<S>::init(prefix + ".attn", q_dim, kv_dim, d, q_dim, seed);
        p.ln1_g = Param<S>(prefix + ".ln1.g", Tensor<S>::full({q_dim}, S(1)));
        p.ln1_b = Param<S>(prefix + ".ln1.b", Tensor<S>::zeros({q_dim}));
        const std::size_t hidden = 2 * q_dim;
        {
            Rng rng = group_rng(seed, prefix + ".ff1.w");
            p.ff_w1 = Param<S>(prefix + ".ff1.w", xavier_uniform<S>(rng, q_dim, hidden));
        }
        p.ff_b1 = Param<S>(prefix + ".ff1.b", Tensor<S>::zeros({hidden}));
        {
            Rng rng = group_rng(seed, prefix + ".ff2.w");
            p.ff_w2 = Param<S>(prefix + ".ff2.w", xavier_uniform<S>(rng, hidden, q_dim));
        }
        p.ff_b2 = Param<S>(prefix + ".ff2.b", Tensor<S>::zeros({q_dim}));
        p.ln2_g = Param<S>(prefix + ".ln2.g", Tensor<S>::full({q_dim}, S(1)));
        p.ln2_b = Param<S>(prefix + ".ln2.b", Tensor<S>::zeros({q_dim}));
        return p;
    }

    void collect(std::vector<Param<S>*>& out) {
        attn.collect(out);
        out.push_back(&ln1_g);
        out.push_back(&ln1_b);
        out.push_back(&ff_w1);
        out.push_back(&ff_b1);
        out.push_back(&ff_w2);
        out.push_back(&ff_b2);
        out.push_back(&ln2_g);
        out.push_back(&ln2_b);
    }
};

template <typename S>
struct CrossBlockOut {
    typename Graph<S>::NodeId out;                      // [N_q x q_dim]
    std::vector<typename Graph<S>::NodeId> head_attn;   // per head, [N_q x N_kv]
};

template <typename S>
CrossBlockOut<S> cross_attention_block(Graph<S>& g, typename Graph<S>::NodeId q_src,
                                       typename Graph<S>::NodeId kv_src, CrossBlockParams<S>& p,
                                       std::size_t n_heads) {
    auto att = multi_head_attention(g, q_src, kv_src, p.attn, n_heads);
    const auto y1 =
        g.layer_norm(g.add(q_src, att.out), g.param(p.ln1_g), g.param(p.ln1_b), S(kLayerNormEps));
    const auto ff = ffn(g, y1, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2);
    const auto y2 = g.layer_norm(g.add(y1, ff), g.param(p.ln2_g), g.param(p.ln2_b), S(kLayerNormEps));
    return {y2, std::move(att.head_attn)};
}

/// Reduce each present stream over its token axis by mean pooling, then
/// combine across streams. Single-stream calls pass npos for the absent one
/// and return that stream's pooled vector.
template <typename S>
typename Graph<S>::NodeId fuse_streams(Graph<S>& g, typename Graph<S>::NodeId z_cf,
                                       typename Graph<S>::NodeId z_if, Fusion fusion) {
    const auto npos = Graph<S>::npos;
    if (z_cf == npos && z_if == npos) throw std::invalid_argument("fuse_streams: no streams");
    if (z_if == npos) return g.mean_rows(z_cf);
    if (z_cf == npos) return g.mean_rows(z_if);
    const auto p_cf = g.mean_rows(z_cf);
    const auto p_if = g.mean_rows(z_if);
    switch (fusion) {
        case Fusion::Max: return g.emax(p_cf, p_if);
        case Fusion::Mean: return g.scale(g.add(p_cf, p_if), S(0.5));
        case Fusion::Concat: return g.concat_cols({p_cf, p_if});
    }
    throw std::invalid_argument("fuse_streams: bad fusion kind");
}

/// LN + linear classifier over the fused vector.
template <typename S>
struct FusedClassifierParams {
    Param<S> ln_g, ln_b, w, b;

    static FusedClassifierParams init(const std::string& prefix, std::size_t in_dim, std::size_t k,
                                      std::uint64_t seed) {
        FusedClassifierParams p;
        p.ln_g = Param<S>(prefix + ".ln.g", Tensor<S>::full({in_dim}, S(1)));
        p.ln_b = Param<S>(prefix + ".ln.b", Tensor<S>::zeros({in_dim}));
        {
            Rng rng = group_rng(seed, prefix + ".w");
            p.w = Param<S>(prefix + ".w", xavier_uniform<S>(rng, in_dim, k));
        }
        p.b = Param<S>(prefix + ".b", Tensor<S>::zeros({k}));
        return p;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&ln_g);
        out.push_back(&ln_b);
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <typename S>
typename Graph<S>::NodeId classify_fused(Graph<S>& g, typename Graph<S>::NodeId fused,
                                         FusedClassifierParams<S>& p) {
    const auto n = g.layer_norm(fused, g.param(p.ln_g), g.param(p.ln_b), S(kLayerNormEps));
    return g.add_bias(g.matmul(n, g.param(p.w)), g.param(p.b));
}

/// Two-layer MLP head on a class-token feature: C_e -> C_e, GELU, C_e -> k.
template <typename S>
struct MlpHeadParams {
    Param<S> w1, b1, w2, b2;

    static MlpHeadParams init(const std::string& prefix, std::size_t C_e, std::size_t k,
                              std::uint64_t seed) {
        MlpHeadParams p;
        {
            Rng rng = group_rng(seed, prefix + ".w1");
            p.w1 = Param<S>(prefix + ".w1", xavier_uniform<S>(rng, C_e, C_e));
        }
        p.b1 = Param<S>(prefix + ".b1", Tensor<S>::zeros({C_e}));
        {
            Rng rng = group_rng(seed, prefix + ".w2");
            p.w2 = Param<S>(prefix + ".w2", xavier_uniform<S>(rng, C_e, k));
        }
        p.b2 = Param<S>(prefix + ".b2", Tensor<S>::zeros({k}));
        return p;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w1);
        out.push_back(&b1);
        out.push_back(&w2);
        out.push_back(&b2);
    }
};

template <typename S>
typename Graph<S>::NodeId mlp_head(Graph<S>& g, typename Graph<S>::NodeId cls_feat, MlpHeadParams<S>& p) {
    const auto h = g.gelu(g.add_bias(g.matmul(cls_feat, g.param(p.w1)), g.param(p.b1)));
    return g.add_bias(g.matmul(h, g.param(p.w2)), g.param(p.b2));
}

}  // namespace cft
