#pragma once

#include <cstddef>
#include <string>
#include <thread>
#include <vector>

#include <cft/config.hpp>
#include <cft/metrics.hpp>
#include <cft/synth.hpp>
#include <cft/trainer.hpp>

namespace cft {

// One comparison row: a model variant trained with the shared recipe and
// scored on the shared validation split.
struct AblationRow {
    std::string name;
    double kappa = 0.0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

// Loss/fusion ablation row: which auxiliary losses are on, whether the
// projection runs, and how the two attended streams fuse.
struct LossRow {
    std::size_t row = 0;
    bool loss_cf = false;
    bool loss_if = false;
    bool projection = false;
    Fusion fusion = Fusion::Max;
    double kappa = 0.0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct AblationTables {
    std::vector<AblationRow> comparison;
    std::vector<LossRow> loss_ablation;
};

struct SweepPoint {
    double lambda = 0.0;
    double kappa = 0.0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    double best_lambda = 0.0;
    double best_kappa = 0.0;
};

inline const std::vector<double>& default_lambda_grid() {
    static const std::vector<double> grid{0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
    return grid;
}

namespace detail {

// Best-epoch validation report of one training run.
template <typename S>
struct TrainedRow {
    TrainResult<S> result;
    EvalReport report;
};

template <typename S>
TrainedRow<S> train_row(const Dataset& tr, const Dataset& val, const ModelConfig& mcfg,
                        const TrainConfig& tcfg) {
    TrainedRow<S> out{train<S>(tr, val, mcfg, tcfg), {}};
    out.report = out.result.reports.at(out.result.best_epoch - 1);
    return out;
}

inline AblationRow to_row(const std::string& name, const EvalReport& r) {
    return {name, r.kappa, r.accuracy, r.macro_f1};
}

}  // namespace detail

// Model comparison table plus the loss/fusion ablation, all rows trained on
// one dataset and scored on one validation split. Voting rows reuse the two
// single-stream models instead of retraining.
template <typename S>
AblationTables run_ablation(const RunConfig& cfg) {
    const auto ds = cfg.dataset_path.empty() ? generate_dataset(cfg.data)
                                             : load_dataset(cfg.dataset_path);
    const auto [tr, val] = stratified_split(ds, 0.8, cfg.data.seed);

    auto variant = [&](StreamSet streams, CfaMode mode, Fusion fusion) {
        ModelConfig m = cfg.model;
        m.streams = streams;
        m.cfa.mode = mode;
        m.cfa.fusion = fusion;
        return m;
    };
    const Fusion fu = cfg.model.cfa.fusion;

    AblationTables out;
    auto cf_only = detail::train_row<S>(tr, val, variant(StreamSet::Cf, CfaMode::None, fu),
                                        cfg.train);
    out.comparison.push_back(detail::to_row("cfp-only", cf_only.report));
    auto if_only = detail::train_row<S>(tr, val, variant(StreamSet::If, CfaMode::None, fu),
                                        cfg.train);
    out.comparison.push_back(detail::to_row("ifp-only", if_only.report));
    out.comparison.push_back(detail::to_row(
        "cfp-self-attn",
        detail::train_row<S>(tr, val, variant(StreamSet::Cf, CfaMode::SelfAttention, fu),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "ifp-self-attn",
        detail::train_row<S>(tr, val, variant(StreamSet::If, CfaMode::SelfAttention, fu),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "voting-max", evaluate_voting(cf_only.result.best.model, if_only.result.best.model, val,
                                      VotingRule::Max)));
    out.comparison.push_back(detail::to_row(
        "voting-average", evaluate_voting(cf_only.result.best.model, if_only.result.best.model,
                                          val, VotingRule::Average)));
    out.comparison.push_back(detail::to_row(
        "feat-max",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::None, Fusion::Max),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "feat-mean",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::None, Fusion::Mean),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "feat-concat",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::None, Fusion::Concat),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "cfp-cross",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::CfpCrossOnly, fu),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "ifp-cross",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::IfpCrossOnly, fu),
                             cfg.train)
            .report));
    out.comparison.push_back(detail::to_row(
        "dual-cross",
        detail::train_row<S>(tr, val, variant(StreamSet::Both, CfaMode::DualCross, fu), cfg.train)
            .report));

    struct Knobs {
        bool cf, iff, proj;
        Fusion fusion;
    };
    const Knobs specs[7] = {
        {false, false, false, Fusion::Max}, {false, false, true, Fusion::Max},
        {true, false, true, Fusion::Max},   {false, true, true, Fusion::Max},
        {true, true, true, Fusion::Mean},   {true, true, true, Fusion::Concat},
        {true, true, true, Fusion::Max},
    };
    for (std::size_t i = 0; i < 7; ++i) {
        ModelConfig m = variant(StreamSet::Both, CfaMode::DualCross, specs[i].fusion);
        m.cfa.projection = specs[i].proj;
        TrainConfig t = cfg.train;
        t.enable_loss_cf = specs[i].cf;
        t.enable_loss_if = specs[i].iff;
        auto row = detail::train_row<S>(tr, val, m, t);
        out.loss_ablation.push_back({i + 1, specs[i].cf, specs[i].iff, specs[i].proj, specs[i].fusion,
                              row.report.kappa, row.report.accuracy, row.report.macro_f1});
    }
    return out;
}

// Loss-weight sweep: one full training per grid point, best-epoch validation
// metrics per point, argmax kappa (first point wins ties). Points are
// independent, so shards can run on separate threads without changing any
// result.
template <typename S>
SweepResult sweep_lambda(const RunConfig& cfg, const std::vector<double>& grid,
                         std::size_t threads = 1) {
    if (grid.empty()) throw std::invalid_argument("sweep_lambda: empty grid");
    for (const double l : grid) validate_lambda(l);

    const auto ds = cfg.dataset_path.empty() ? generate_dataset(cfg.data)
                                             : load_dataset(cfg.dataset_path);
    const auto [tr, val] = stratified_split(ds, 0.8, cfg.data.seed);

    SweepResult out;
    out.points.resize(grid.size());
    auto run_point = [&](std::size_t i) {
        TrainConfig t = cfg.train;
        t.lambda = grid[i];
        auto row = detail::train_row<S>(tr, val, cfg.model, t);
        out.points[i] = {grid[i], row.report.kappa, row.report.accuracy, row.report.macro_f1};
    };

    const std::size_t n_workers = std::min(threads == 0 ? std::size_t(1) : threads, grid.size());
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_point(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < grid.size(); i += n_workers) run_point(i);
            });
        for (auto& th : pool) th.join();
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < out.points.size(); ++i)
        if (out.points[i].kappa > out.points[best].kappa) best = i;
    out.best_lambda = out.points[best].lambda;
    out.best_kappa = out.points[best].kappa;
    return out;
}

}  // namespace cft
