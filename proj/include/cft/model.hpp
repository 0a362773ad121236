#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cft/cfa.hpp"
#include "cft/graph.hpp"
#include "cft/vit.hpp"

namespace cft {

enum class StreamSet { Cf, If, Both };

inline const char* to_string(StreamSet s) {
    switch (s) {
        case StreamSet::Cf: return "cf";
        case StreamSet::If: return "if";
        case StreamSet::Both: return "both";
    }
    return "?";
}

inline StreamSet stream_set_from_string(const std::string& s) {
    if (s == "cf") return StreamSet::Cf;
    if (s == "if") return StreamSet::If;
    if (s == "both") return StreamSet::Both;
    throw std::invalid_argument("streams: unknown set '" + s + "' (cf|if|both)");
}

/// Whole-model shape: two stream configs, the fusion config, class count,
/// and which streams participate.
struct ModelConfig {
    StreamConfig cfp;
    StreamConfig ifp;
    CfaConfig cfa;
    std::size_t k = 5;
    StreamSet streams = StreamSet::Both;

    bool has_cfp() const { return streams != StreamSet::If; }
    bool has_ifp() const { return streams != StreamSet::Cf; }

    // Plain single-modal ViT rows bypass projection, fusion, and classifier.
    bool has_classifier() const { return cfa.mode != CfaMode::None || streams == StreamSet::Both; }

    bool has_cross_cf() const {
        return cfa.mode == CfaMode::DualCross || cfa.mode == CfaMode::CfpCrossOnly ||
               (cfa.mode == CfaMode::SelfAttention && streams == StreamSet::Cf);
    }
    bool has_cross_if() const {
        return cfa.mode == CfaMode::DualCross || cfa.mode == CfaMode::IfpCrossOnly ||
               (cfa.mode == CfaMode::SelfAttention && streams == StreamSet::If);
    }

    // Feature dim entering the CFA path for one stream.
    std::size_t proj_dim_cf() const { return cfa.projection ? cfa.L : cfp.C_e; }
    std::size_t proj_dim_if() const { return cfa.projection ? cfa.L : ifp.C_e; }

    bool fuses_both() const {
        return has_classifier() &&
               (cfa.mode == CfaMode::DualCross || (cfa.mode == CfaMode::None && streams == StreamSet::Both));
    }

    std::size_t classifier_dim() const {
        if (fuses_both()) {
            return cfa.fusion == Fusion::Concat ? proj_dim_cf() + proj_dim_if() : proj_dim_cf();
        }
        const bool cf_path = cfa.mode == CfaMode::CfpCrossOnly ||
                             (cfa.mode == CfaMode::SelfAttention && streams == StreamSet::Cf);
        return cf_path ? proj_dim_cf() : proj_dim_if();
    }

    void validate() const {
        if (k < 2) throw std::invalid_argument("model config: k must be >= 2");
        if (has_cfp()) cfp.validate();
        if (has_ifp()) ifp.validate();
        cfa.validate();
        switch (cfa.mode) {
            case CfaMode::DualCross:
            case CfaMode::CfpCrossOnly:
            case CfaMode::IfpCrossOnly:
                if (streams != StreamSet::Both) {
                    throw std::invalid_argument(std::string("model config: mode ") + to_string(cfa.mode) +
                                                " requires both streams");
                }
                break;
            case CfaMode::SelfAttention:
                if (streams == StreamSet::Both) {
                    throw std::invalid_argument(
                        "model config: self_attention is a single-stream mode (streams cf or if)");
                }
                break;
            case CfaMode::None:
                break;
        }
        if (fuses_both() && cfa.fusion != Fusion::Concat && proj_dim_cf() != proj_dim_if()) {
            throw std::invalid_argument("model config: max/mean fusion needs equal stream dims, got " +
                                        std::to_string(proj_dim_cf()) + " vs " +
                                        std::to_string(proj_dim_if()));
        }
    }
};

template <typename S>
struct CftModel {
    ModelConfig cfg;
    std::optional<StreamParams<S>> enc_cf, enc_if;
    std::optional<ProjectionParams<S>> proj_cf, proj_if;
    std::optional<CrossBlockParams<S>> cross_cf, cross_if;
    std::optional<FusedClassifierParams<S>> classifier;
    std::optional<MlpHeadParams<S>> head_cf, head_if;

    static CftModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        CftModel m;
        m.cfg = cfg;
        if (cfg.has_cfp()) {
            m.enc_cf = StreamParams<S>::init(cfg.cfp, "cf", seed);
            m.head_cf = MlpHeadParams<S>::init("head_cf", cfg.cfp.C_e, cfg.k, seed);
        }
        if (cfg.has_ifp()) {
            m.enc_if = StreamParams<S>::init(cfg.ifp, "if", seed);
            m.head_if = MlpHeadParams<S>::init("head_if", cfg.ifp.C_e, cfg.k, seed);
        }
        if (cfg.has_classifier()) {
            if (cfg.cfa.projection) {
                if (cfg.has_cfp()) m.proj_cf = ProjectionParams<S>::init("proj_cf", cfg.cfp.C_e, cfg.cfa.L, seed);
                if (cfg.has_ifp()) m.proj_if = ProjectionParams<S>::init("proj_if", cfg.ifp.C_e, cfg.cfa.L, seed);
            }
            if (cfg.has_cross_cf()) {
                const std::size_t kv = cfg.cfa.mode == CfaMode::SelfAttention ? cfg.proj_dim_cf()
                                                                              : cfg.proj_dim_if();
                m.cross_cf = CrossBlockParams<S>::init("cross_cf", cfg.proj_dim_cf(), kv, cfg.cfa.d, seed);
            }
            if (cfg.has_cross_if()) {
                const std::size_t kv = cfg.cfa.mode == CfaMode::SelfAttention ? cfg.proj_dim_if()
                                                                              : cfg.proj_dim_cf();
                m.cross_if = CrossBlockParams<S>::init("cross_if", cfg.proj_dim_if(), kv, cfg.cfa.d, seed);
            }
            m.classifier = FusedClassifierParams<S>::init("cls", cfg.classifier_dim(), cfg.k, seed);
        }
        return m;
    }

    /// Stable parameter order; checkpoint and optimizer state rely on it.
    std::vector<Param<S>*> params() {
        std::vector<Param<S>*> out;
        if (enc_cf) enc_cf->collect(out);
        if (enc_if) enc_if->collect(out);
        if (proj_cf) proj_cf->collect(out);
        if (proj_if) proj_if->collect(out);
        if (cross_cf) cross_cf->collect(out);
        if (cross_if) cross_if->collect(out);
        if (classifier) classifier->collect(out);
        if (head_cf) head_cf->collect(out);
        if (head_if) head_if->collect(out);
        return out;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }
};

template <typename S>
struct ModelOut {
    typename Graph<S>::NodeId logits_cf = Graph<S>::npos;
    typename Graph<S>::NodeId logits_if = Graph<S>::npos;
    typename Graph<S>::NodeId logits_cls = Graph<S>::npos;
    EncodeOut<S> enc_cf, enc_if;
    std::vector<typename Graph<S>::NodeId> cross_attn_cf, cross_attn_if;  // per head
};

/// Full forward pass of one paired sample. Pass nullptr for an absent
/// modality; presence must match the configured stream set.
template <typename S>
ModelOut<S> forward(Graph<S>& g, CftModel<S>& m, const Tensor<S>* img_cf, const Tensor<S>* img_if) {
    const ModelConfig& cfg = m.cfg;
    if (cfg.has_cfp() != (img_cf != nullptr) || cfg.has_ifp() != (img_if != nullptr)) {
        throw std::invalid_argument(std::string("forward: stream set '") + to_string(cfg.streams) +
                                    "' does not match supplied inputs");
    }
    ModelOut<S> out;
    const auto npos = Graph<S>::npos;
    typename Graph<S>::NodeId f_cf = npos, f_if = npos;

    if (img_cf) {
        out.enc_cf = encode(g, *img_cf, cfg.cfp, *m.enc_cf);
        out.logits_cf = mlp_head(g, out.enc_cf.cls_feat, *m.head_cf);
        f_cf = out.enc_cf.patch_feats;
    }
    if (img_if) {
        out.enc_if = encode(g, *img_if, cfg.ifp, *m.enc_if);
        out.logits_if = mlp_head(g, out.enc_if.cls_feat, *m.head_if);
        f_if = out.enc_if.patch_feats;
    }
    if (!cfg.has_classifier()) return out;

    if (m.proj_cf && f_cf != npos) f_cf = linear_project(g, f_cf, *m.proj_cf);
    if (m.proj_if && f_if != npos) f_if = linear_project(g, f_if, *m.proj_if);

    typename Graph<S>::NodeId z_cf = npos, z_if = npos;
    switch (cfg.cfa.mode) {
        case CfaMode::DualCross: {
            auto a = cross_attention_block(g, f_cf, f_if, *m.cross_cf, cfg.cfa.n_heads);
            auto b = cross_attention_block(g, f_if, f_cf, *m.cross_if, cfg.cfa.n_heads);
            z_cf = a.out;
            z_if = b.out;
            out.cross_attn_cf = std::move(a.head_attn);
            out.cross_attn_if = std::move(b.head_attn);
            break;
        }
        case CfaMode::CfpCrossOnly: {
            auto a = cross_attention_block(g, f_cf, f_if, *m.cross_cf, cfg.cfa.n_heads);
            z_cf = a.out;
            out.cross_attn_cf = std::move(a.head_attn);
            break;
        }
        case CfaMode::IfpCrossOnly: {
            auto b = cross_attention_block(g, f_if, f_cf, *m.cross_if, cfg.cfa.n_heads);
            z_if = b.out;
            out.cross_attn_if = std::move(b.head_attn);
            break;
        }
        case CfaMode::SelfAttention: {
            if (cfg.streams == StreamSet::Cf) {
                auto a = cross_attention_block(g, f_cf, f_cf, *m.cross_cf, cfg.cfa.n_heads);
                z_cf = a.out;
                out.cross_attn_cf = std::move(a.head_attn);
            } else {
                auto b = cross_attention_block(g, f_if, f_if, *m.cross_if, cfg.cfa.n_heads);
                z_if = b.out;
                out.cross_attn_if = std::move(b.head_attn);
            }
            break;
        }
        case CfaMode::None:
            z_cf = f_cf;
            z_if = f_if;
            break;
    }
    const auto fused = fuse_streams(g, z_cf, z_if, cfg.cfa.fusion);
    out.logits_cls = classify_fused(g, fused, *m.classifier);
    return out;
}

}  // namespace cft
