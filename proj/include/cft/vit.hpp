#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cft/attention.hpp"
#include "cft/graph.hpp"
#include "cft/init.hpp"
#include "cft/tensor.hpp"

namespace cft {

inline constexpr double kLayerNormEps = 1e-5;

/// One ViT stream: image extents, patch size, embedding width, block count.
struct StreamConfig {
    std::size_t H = 32;
    std::size_t W = 32;
    std::size_t C_in = 1;
    std::size_t p = 8;
    std::size_t C_e = 8;
    std::size_t depth = 2;
    std::size_t n_heads_enc = 2;
    std::size_t mlp_ratio = 4;

    void validate() const {
        if (p == 0 || H % p != 0 || W % p != 0) {
            throw std::invalid_argument("stream config: image " + std::to_string(H) + "x" + std::to_string(W) +
                                        " not divisible by patch size " + std::to_string(p));
        }
        if (n_heads_enc == 0 || C_e % n_heads_enc != 0) {
            throw std::invalid_argument("stream config: C_e " + std::to_string(C_e) + " not divisible by " +
                                        std::to_string(n_heads_enc) + " heads");
        }
        if (C_e == 0 || depth > 64 || mlp_ratio == 0) {
            throw std::invalid_argument("stream config: degenerate C_e/depth/mlp_ratio");
        }
    }

    std::size_t n_patches() const { return (H / p) * (W / p); }
    std::size_t patch_len() const { return p * p * C_in; }
};

/// [H x W x C] -> [N x p*p*C]; patches ordered row-major over the patch grid,
/// each patch flattened row-major over (row, col, channel).
template <typename S>
Tensor<S> patchify(const Tensor<S>& img, std::size_t p) {
    if (img.rank() != 3) throw std::invalid_argument("patchify: image must be rank 3, got " + shape_str(img.shape));
    const std::size_t H = img.shape[0], W = img.shape[1], C = img.shape[2];
    if (p == 0 || H % p != 0 || W % p != 0) {
        throw std::invalid_argument("patchify: extents " + shape_str(img.shape) + " not divisible by p=" +
                                    std::to_string(p));
    }
    const std::size_t gh = H / p, gw = W / p;
    Tensor<S> out({gh * gw, p * p * C});
    std::size_t row = 0;
    for (std::size_t gr = 0; gr < gh; ++gr) {
        for (std::size_t gc = 0; gc < gw; ++gc, ++row) {
            std::size_t at = row * out.cols();
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t c = 0; c < p; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        out.data[at++] = img.at3(gr * p + r, gc * p + c, ch);
        }
    }
    return out;
}

template <typename S>
Tensor<S> unpatchify(const Tensor<S>& patches, std::size_t H, std::size_t W, std::size_t C, std::size_t p) {
    const std::size_t gh = H / p, gw = W / p;
    if (patches.rows() != gh * gw || patches.cols() != p * p * C) {
        throw std::invalid_argument("unpatchify: " + shape_str(patches.shape) + " does not tile " +
                                    std::to_string(H) + "x" + std::to_string(W) + "x" + std::to_string(C));
    }
    Tensor<S> img({H, W, C});
    std::size_t row = 0;
    for (std::size_t gr = 0; gr < gh; ++gr) {
        for (std::size_t gc = 0; gc < gw; ++gc, ++row) {
            std::size_t at = row * patches.cols();
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t c = 0; c < p; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        img.at3(gr * p + r, gc * p + c, ch) = patches.data[at++];
        }
    }
    return img;
}

template <typename S>
struct EncoderBlockParams {
    Param<S> ln1_g, ln1_b;
    AttentionParams<S> attn;
    Param<S> ln2_g, ln2_b;
    Param<S> w_ff1, b_ff1, w_ff2, b_ff2;

    static EncoderBlockParams init(const std::string& prefix, std::size_t C_e, std::size_t mlp_ratio,
                                   std::uint64_t seed) {
        EncoderBlockParams b;
        b.ln1_g = Param<S>(prefix + ".ln1.g", Tensor<S>::full({C_e}, S(1)));
        b.ln1_b = Param<S>(prefix + ".ln1.b", Tensor<S>::zeros({C_e}));
        b.attn = AttentionParams<S>::init(prefix + ".attn", C_e, C_e, C_e, C_e, seed);
        b.ln2_g = Param<S>(prefix + ".ln2.g", Tensor<S>::full({C_e}, S(1)));
        b.ln2_b = Param<S>(prefix + ".ln2.b", Tensor<S>::zeros({C_e}));
        const std::size_t hidden = mlp_ratio * C_e;
        {
            Rng rng = group_rng(seed, prefix + ".ff1.w");
            b.w_ff1 = Param<S>(prefix + ".ff1.w", xavier_uniform<S>(rng, C_e, hidden));
        }
        b.b_ff1 = Param<S>(prefix + ".ff1.b", Tensor<S>::zeros({hidden}));
        {
            Rng rng = group_rng(seed, prefix + ".ff2.w");
            b.w_ff2 = Param<S>(prefix + ".ff2.w", xavier_uniform<S>(rng, hidden, C_e));
        }
        b.b_ff2 = Param<S>(prefix + ".ff2.b", Tensor<S>::zeros({C_e}));
        return b;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&ln1_g);
        out.push_back(&ln1_b);
        attn.collect(out);
        out.push_back(&ln2_g);
        out.push_back(&ln2_b);
        out.push_back(&w_ff1);
        out.push_back(&b_ff1);
        out.push_back(&w_ff2);
        out.push_back(&b_ff2);
    }
};

template <typename S>
struct StreamParams {
    Param<S> w_embed, b_embed, cls, pos;
    std::vector<EncoderBlockParams<S>> blocks;
    Param<S> lnf_g, lnf_b;

    static StreamParams init(const StreamConfig& cfg, const std::string& prefix, std::uint64_t seed) {
        cfg.validate();
        StreamParams ps;
        {
            Rng rng = group_rng(seed, prefix + ".embed.w");
            ps.w_embed = Param<S>(prefix + ".embed.w", xavier_uniform<S>(rng, cfg.patch_len(), cfg.C_e));
        }
        ps.b_embed = Param<S>(prefix + ".embed.b", Tensor<S>::zeros({cfg.C_e}));
        {
            Rng rng = group_rng(seed, prefix + ".cls");
            ps.cls = Param<S>(prefix + ".cls", gaussian_init<S>(rng, {1, cfg.C_e}, 0.02));
        }
        {
            Rng rng = group_rng(seed, prefix + ".pos");
            ps.pos = Param<S>(prefix + ".pos", gaussian_init<S>(rng, {cfg.n_patches() + 1, cfg.C_e}, 0.02));
        }
        for (std::size_t i = 0; i < cfg.depth; ++i) {
            ps.blocks.push_back(EncoderBlockParams<S>::init(prefix + ".block" + std::to_string(i), cfg.C_e,
                                                            cfg.mlp_ratio, seed));
        }
        ps.lnf_g = Param<S>(prefix + ".lnf.g", Tensor<S>::full({cfg.C_e}, S(1)));
        ps.lnf_b = Param<S>(prefix + ".lnf.b", Tensor<S>::zeros({cfg.C_e}));
        return ps;
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w_embed);
        out.push_back(&b_embed);
        out.push_back(&cls);
        out.push_back(&pos);
        for (auto& b : blocks) b.collect(out);
        out.push_back(&lnf_g);
        out.push_back(&lnf_b);
    }
};

/// Patch rows -> embedded token sequence with class token at row 0 and the
/// learned position embedding added.
template <typename S>
typename Graph<S>::NodeId embed_tokens(Graph<S>& g, typename Graph<S>::NodeId patches,
                                       StreamParams<S>& ps) {
    const auto& pv = g.value(patches);
    if (pv.cols() != ps.w_embed.value.rows()) {
        throw std::invalid_argument("embed_tokens: patch length " + std::to_string(pv.cols()) +
                                    " vs embed weight " + shape_str(ps.w_embed.value.shape));
    }
    const auto e = g.add_bias(g.matmul(patches, g.param(ps.w_embed)), g.param(ps.b_embed));
    const auto tokens = g.concat_rows({g.param(ps.cls), e});
    if (g.value(tokens).rows() != ps.pos.value.rows()) {
        throw std::invalid_argument("embed_tokens: " + std::to_string(g.value(tokens).rows()) +
                                    " tokens vs position embedding " + shape_str(ps.pos.value.shape));
    }
    return g.add(tokens, g.param(ps.pos));
}

template <typename S>
typename Graph<S>::NodeId ffn(Graph<S>& g, typename Graph<S>::NodeId x, Param<S>& w1, Param<S>& b1,
                              Param<S>& w2, Param<S>& b2) {
    const auto h = g.gelu(g.add_bias(g.matmul(x, g.param(w1)), g.param(b1)));
    return g.add_bias(g.matmul(h, g.param(w2)), g.param(b2));
}

template <typename S>
struct BlockOut {
    typename Graph<S>::NodeId out;
    std::vector<typename Graph<S>::NodeId> head_attn;
};

/// Pre-norm block: x + MHA(LN(x)), then + FFN(LN(.)). Self-attention.
template <typename S>
BlockOut<S> encoder_block(Graph<S>& g, typename Graph<S>::NodeId x, EncoderBlockParams<S>& bp,
                          std::size_t n_heads) {
    const auto xn = g.layer_norm(x, g.param(bp.ln1_g), g.param(bp.ln1_b), S(kLayerNormEps));
    auto att = multi_head_attention(g, xn, xn, bp.attn, n_heads);
    const auto h = g.add(x, att.out);
    const auto hn = g.layer_norm(h, g.param(bp.ln2_g), g.param(bp.ln2_b), S(kLayerNormEps));
    const auto out = g.add(h, ffn(g, hn, bp.w_ff1, bp.b_ff1, bp.w_ff2, bp.b_ff2));
    return {out, std::move(att.head_attn)};
}

template <typename S>
struct EncodeOut {
    typename Graph<S>::NodeId cls_feat;                                  // [1 x C_e]
    typename Graph<S>::NodeId patch_feats;                               // [N x C_e]
    std::vector<std::vector<typename Graph<S>::NodeId>> block_attn;      // depth x heads, each [T x T]
};

/// Full stream: patchify, embed, depth blocks, final LN, split class token
/// from patch tokens. Attention nodes are returned for rollout.
template <typename S>
EncodeOut<S> encode(Graph<S>& g, const Tensor<S>& img, const StreamConfig& cfg, StreamParams<S>& ps) {
    cfg.validate();
    if (img.shape != Shape{cfg.H, cfg.W, cfg.C_in}) {
        throw std::invalid_argument("encode: image " + shape_str(img.shape) + " vs config " +
                                    std::to_string(cfg.H) + "x" + std::to_string(cfg.W) + "x" +
                                    std::to_string(cfg.C_in));
    }
    const auto patches = g.input(patchify(img, cfg.p));
    auto x = embed_tokens(g, patches, ps);
    EncodeOut<S> out;
    for (auto& bp : ps.blocks) {
        auto b = encoder_block(g, x, bp, cfg.n_heads_enc);
        x = b.out;
        out.block_attn.push_back(std::move(b.head_attn));
    }
    const auto xn = g.layer_norm(x, g.param(ps.lnf_g), g.param(ps.lnf_b), S(kLayerNormEps));
    out.cls_feat = g.slice_rows(xn, 0, 1);
    out.patch_feats = g.slice_rows(xn, 1, cfg.n_patches() + 1);
    return out;
}

}  // namespace cft
