#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cft/graph.hpp"
#include "cft/model.hpp"
#include "cft/ops.hpp"

namespace cft {

inline void validate_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("lambda: value " + std::to_string(lambda) + " outside [0,1]");
    }
}

template <typename S>
struct LossBundle {
    typename Graph<S>::NodeId l_cf = Graph<S>::npos;
    typename Graph<S>::NodeId l_if = Graph<S>::npos;
    typename Graph<S>::NodeId l_cls = Graph<S>::npos;
    typename Graph<S>::NodeId total = Graph<S>::npos;
    double effective_lambda = 0.0;
};

/// total = lambda * l_cf + (1 - lambda) * l_if + l_cls over scalar loss
/// nodes, any of which may be npos (absent). Terms with a zero coefficient
/// are dropped from the graph entirely, so their parameters see exactly-zero
/// gradients rather than a multiplied-by-zero path.
template <typename S>
typename Graph<S>::NodeId total_loss(Graph<S>& g, typename Graph<S>::NodeId l_cf,
                                     typename Graph<S>::NodeId l_if, typename Graph<S>::NodeId l_cls,
                                     double lambda) {
    validate_lambda(lambda);
    const auto npos = Graph<S>::npos;
    std::vector<typename Graph<S>::NodeId> terms;
    if (l_cf != npos && lambda != 0.0) {
        terms.push_back(lambda == 1.0 ? l_cf : g.scale(l_cf, static_cast<S>(lambda)));
    }
    if (l_if != npos && lambda != 1.0) {
        terms.push_back(lambda == 0.0 ? l_if : g.scale(l_if, static_cast<S>(1.0 - lambda)));
    }
    if (l_cls != npos) terms.push_back(l_cls);
    if (terms.empty()) throw std::invalid_argument("total_loss: every loss term is disabled or absent");
    auto total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
    return total;
}

/// Cross-entropy per enabled head plus the fused classifier, combined by
/// total_loss. When only one head loss survives (single-stream model or a
/// disabled term) the effective lambda snaps to 1 (cf) or 0 (if) so the
/// surviving term keeps full weight and the identity still holds exactly.
template <typename S>
LossBundle<S> build_losses(Graph<S>& g, const ModelOut<S>& out, std::size_t label, double lambda,
                           bool enable_cf, bool enable_if) {
    validate_lambda(lambda);
    const auto npos = Graph<S>::npos;
    LossBundle<S> b;
    const bool want_cf = enable_cf && out.logits_cf != npos;
    const bool want_if = enable_if && out.logits_if != npos;
    if (want_cf) b.l_cf = g.cross_entropy(out.logits_cf, label);
    if (want_if) b.l_if = g.cross_entropy(out.logits_if, label);
    if (out.logits_cls != npos) b.l_cls = g.cross_entropy(out.logits_cls, label);

    double lam = lambda;
    if (want_cf && !want_if) lam = 1.0;
    if (!want_cf && want_if) lam = 0.0;
    b.effective_lambda = lam;
    b.total = total_loss(g, b.l_cf, b.l_if, b.l_cls, lam);
    return b;
}

/// score = (logits_cf + logits_if) / 2 + logits_cls; argmax, lowest index on
/// ties.
template <typename S>
std::size_t combine_inference(const Tensor<S>& logits_cf, const Tensor<S>& logits_if,
                              const Tensor<S>& logits_cls) {
    const std::size_t k = logits_cls.numel();
    if (logits_cf.numel() != k || logits_if.numel() != k) {
        throw std::invalid_argument("combine_inference: lengths " + std::to_string(logits_cf.numel()) +
                                    "/" + std::to_string(logits_if.numel()) + "/" + std::to_string(k));
    }
    std::vector<S> score(k);
    for (std::size_t i = 0; i < k; ++i) {
        score[i] = (logits_cf.data[i] + logits_if.data[i]) / S(2) + logits_cls.data[i];
    }
    return argmax_lowest(score);
}

/// Generalization of the combine rule to any subset of outputs: mean of the
/// present head logits plus the classifier logits when present. Reduces to
/// combine_inference for the full dual model and to plain head argmax for a
/// single-modality model.
template <typename S>
std::size_t predict(const Graph<S>& g, const ModelOut<S>& out) {
    const auto npos = Graph<S>::npos;
    std::vector<const Tensor<S>*> heads;
    if (out.logits_cf != npos) heads.push_back(&g.value(out.logits_cf));
    if (out.logits_if != npos) heads.push_back(&g.value(out.logits_if));
    const Tensor<S>* cls = out.logits_cls != npos ? &g.value(out.logits_cls) : nullptr;
    if (heads.empty() && cls == nullptr) throw std::invalid_argument("predict: model produced no logits");
    const std::size_t k = heads.empty() ? cls->numel() : heads[0]->numel();
    std::vector<S> score(k, S(0));
    for (const auto* h : heads) {
        for (std::size_t i = 0; i < k; ++i) score[i] += h->data[i] / static_cast<S>(heads.size());
    }
    if (cls) {
        for (std::size_t i = 0; i < k; ++i) score[i] += cls->data[i];
    }
    return argmax_lowest(score);
}

enum class VotingRule { Max, Average };

inline VotingRule voting_rule_from_string(const std::string& s) {
    if (s == "max") return VotingRule::Max;
    if (s == "average") return VotingRule::Average;
    throw std::invalid_argument("voting rule: unknown rule '" + s + "' (max|average)");
}

/// Decision-level fusion of two probability vectors.
template <typename S>
std::size_t voting_fuse(const Tensor<S>& prob_cf, const Tensor<S>& prob_if, VotingRule rule) {
    const std::size_t k = prob_cf.numel();
    if (prob_if.numel() != k) {
        throw std::invalid_argument("voting_fuse: lengths " + std::to_string(k) + " vs " +
                                    std::to_string(prob_if.numel()));
    }
    for (const Tensor<S>* p : {&prob_cf, &prob_if}) {
        S sum = S(0);
        for (S v : p->data) {
            if (v < S(0)) throw std::invalid_argument("voting_fuse: negative probability entry");
            sum += v;
        }
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6) {
            throw std::invalid_argument("voting_fuse: probabilities sum to " +
                                        std::to_string(static_cast<double>(sum)) + ", not 1");
        }
    }
    std::vector<S> score(k);
    for (std::size_t i = 0; i < k; ++i) {
        score[i] = rule == VotingRule::Max ? std::max(prob_cf.data[i], prob_if.data[i])
                                           : (prob_cf.data[i] + prob_if.data[i]) / S(2);
    }
    return argmax_lowest(score);
}

}  // namespace cft
