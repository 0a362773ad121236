#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cft {

// Row = true class, column = predicted class. Counts, not rates.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::int64_t> counts;  // k*k, row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t k_) : k(k_), counts(k_ * k_, 0) {
        if (k_ == 0) throw std::invalid_argument("confusion matrix needs k >= 1");
    }

    std::int64_t& at(std::size_t t, std::size_t p) { return counts[t * k + p]; }
    std::int64_t at(std::size_t t, std::size_t p) const { return counts[t * k + p]; }

    std::int64_t total() const {
        std::int64_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truths,
                                        const std::vector<std::size_t>& preds, std::size_t k) {
    if (truths.size() != preds.size())
        throw std::invalid_argument("confusion_matrix: " + std::to_string(truths.size()) +
                                    " truths vs " + std::to_string(preds.size()) + " preds");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] >= k || preds[i] >= k)
            throw std::out_of_range("confusion_matrix: class id at sample " + std::to_string(i) +
                                    " not below k=" + std::to_string(k));
        ++cm.at(truths[i], preds[i]);
    }
    return cm;
}

// kappa = 1 - sum(w*O) / sum(w*E), w_ij = (i-j)^2 / (k-1)^2, E the marginal
// outer product scaled so sum(E) == sum(O). Undefined (thrown, never a silent
// 0) when fewer than two distinct classes occur across truths and predictions:
// that is exactly when sum(w*E) == 0.
inline double quadratic_weighted_kappa(const ConfusionMatrix& cm) {
    const std::size_t k = cm.k;
    const double total = static_cast<double>(cm.total());
    if (total <= 0) throw std::invalid_argument("quadratic_weighted_kappa: empty confusion matrix");
    if (k < 2)
        throw std::domain_error("quadratic_weighted_kappa: undefined for a single-class task");

    std::vector<double> row(k, 0.0), col(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            row[i] += static_cast<double>(cm.at(i, j));
            col[j] += static_cast<double>(cm.at(i, j));
        }

    const double denom_w = static_cast<double>((k - 1) * (k - 1));
    double wo = 0.0, we = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double diff = static_cast<double>(i) - static_cast<double>(j);
            const double w = diff * diff / denom_w;
            wo += w * static_cast<double>(cm.at(i, j));
            we += w * row[i] * col[j] / total;
        }
    if (we == 0.0)
        throw std::domain_error(
            "quadratic_weighted_kappa: undefined, fewer than two distinct classes present");
    return 1.0 - wo / we;
}

// accuracy = trace/total. Macro-F1 averages per-class F1 over all k classes;
// a class with no support and no predictions contributes 0, not NaN.
inline std::pair<double, double> accuracy_and_macro_f1(const ConfusionMatrix& cm) {
    const std::size_t k = cm.k;
    const double total = static_cast<double>(cm.total());
    if (total <= 0) throw std::invalid_argument("accuracy_and_macro_f1: empty confusion matrix");

    double trace = 0.0;
    for (std::size_t i = 0; i < k; ++i) trace += static_cast<double>(cm.at(i, i));
    const double accuracy = trace / total;

    double f1_sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        double tp = static_cast<double>(cm.at(c, c));
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row += static_cast<double>(cm.at(c, j));
            col += static_cast<double>(cm.at(j, c));
        }
        const double denom = row + col;  // 2tp + fp + fn
        f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp / denom;
    }
    return {accuracy, f1_sum / static_cast<double>(k)};
}

struct EvalReport {
    double kappa = 0.0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    ConfusionMatrix confusion;
    std::size_t n_samples = 0;
};

inline EvalReport make_report(const ConfusionMatrix& cm) {
    EvalReport r;
    r.kappa = quadratic_weighted_kappa(cm);
    auto [acc, f1] = accuracy_and_macro_f1(cm);
    r.accuracy = acc;
    r.macro_f1 = f1;
    r.confusion = cm;
    r.n_samples = static_cast<std::size_t>(cm.total());
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json cm = nlohmann::json::array();
    for (std::size_t i = 0; i < r.confusion.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < r.confusion.k; ++j) row.push_back(r.confusion.at(i, j));
        cm.push_back(row);
    }
    return nlohmann::json{{"kappa", r.kappa},
                          {"accuracy", r.accuracy},
                          {"macro_f1", r.macro_f1},
                          {"confusion", cm},
                          {"n_samples", r.n_samples}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.kappa = j.at("kappa").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    const auto& cm = j.at("confusion");
    ConfusionMatrix c(cm.size());
    for (std::size_t i = 0; i < c.k; ++i)
        for (std::size_t j2 = 0; j2 < c.k; ++j2) c.at(i, j2) = cm.at(i).at(j2).get<std::int64_t>();
    r.confusion = c;
    r.n_samples = j.at("n_samples").get<std::size_t>();
    return r;
}

}  // namespace cft
