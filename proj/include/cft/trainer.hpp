#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include <cft/metrics.hpp>
#include <cft/model.hpp>
#include <cft/objective.hpp>
#include <cft/synth.hpp>

namespace cft {

struct TrainConfig {
    std::size_t epochs = 30;  // desk scale; see also the 100-epoch full schedule
    double base_lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 16;
    double lambda = 0.6;
    std::uint64_t seed = 1;
    std::size_t precision_bits = 32;
    bool enable_loss_cf = true;
    bool enable_loss_if = true;
    bool augment = true;

    void validate() const {
        if (epochs == 0) throw std::invalid_argument("epochs must be positive");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
        if (precision_bits != 32 && precision_bits != 64)
            throw std::invalid_argument("precision must be 32 or 64 bits");
        validate_lambda(lambda);
    }
};

// eta = base_lr * 0.5 * (1 + cos(pi * epoch / epochs)); per-epoch step, no
// warmup, floor exactly 0 at epoch == epochs.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch > cfg.epochs)
        throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " past " +
                                std::to_string(cfg.epochs));
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <typename S>
struct AdamState {
    Tensor<S> m, v;
};

template <typename S>
struct TrainState {
    CftModel<S> model;
    std::vector<AdamState<S>> moments;  // parallel to model.params() order
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string rng_state;

    static TrainState init(const ModelConfig& mcfg, std::uint64_t seed) {
        TrainState st;
        st.model = CftModel<S>::init(mcfg, seed);
        for (auto* p : st.model.params())
            st.moments.push_back({Tensor<S>::zeros(p->value.shape), Tensor<S>::zeros(p->value.shape)});
        return st;
    }
};

// Adam with decoupled weight decay: theta <- theta - lr*wd*theta first, then
// the bias-corrected moment update. beta1 0.9, beta2 0.999, eps 1e-8.
template <typename S>
void adam_step(TrainState<S>& st, double lr, const TrainConfig& cfg) {
    auto params = st.model.params();
    if (params.size() != st.moments.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                    " params vs " + std::to_string(st.moments.size()) +
                                    " moment slots");
    st.step += 1;
    const S b1 = S(0.9), b2 = S(0.999), eps = S(1e-8);
    const S corr1 = S(1) - static_cast<S>(std::pow(0.9, static_cast<double>(st.step)));
    const S corr2 = S(1) - static_cast<S>(std::pow(0.999, static_cast<double>(st.step)));
    const S slr = static_cast<S>(lr);
    const S decay = static_cast<S>(lr * cfg.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& mom = st.moments[i];
        if (p.grad.shape != p.value.shape)
            throw std::invalid_argument("adam_step: grad shape mismatch on " + p.name);
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            S& theta = p.value.data[j];
            const S g = p.grad.data[j];
            theta -= decay * theta;
            mom.m.data[j] = b1 * mom.m.data[j] + (S(1) - b1) * g;
            mom.v.data[j] = b2 * mom.v.data[j] + (S(1) - b2) * g * g;
            const S mhat = mom.m.data[j] / corr1;
            const S vhat = mom.v.data[j] / corr2;
            theta -= slr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// Fixed input normalization: [0,1] pixels recentered and rescaled so lesion
// contrast, not the shared background level, dominates the patch embeddings.
// Applied identically at train and eval time.
template <typename S>
Tensor<S> to_model_input(const Tensor<float>& img) {
    Tensor<S> out(img.shape);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = (static_cast<S>(img.data[i]) - S(0.5)) * S(4);
    return out;
}

template <typename S>
ModelOut<S> forward_sample(Graph<S>& g, CftModel<S>& model, const PairedSample& s) {
    Tensor<S> cf, ifp;
    const Tensor<S>* pcf = nullptr;
    const Tensor<S>* pif = nullptr;
    if (model.cfg.has_cfp()) {
        cf = to_model_input<S>(s.cfp);
        pcf = &cf;
    }
    if (model.cfg.has_ifp()) {
        ifp = to_model_input<S>(s.ifp);
        pif = &ifp;
    }
    return forward(g, model, pcf, pif);
}

template <typename S>
EvalReport evaluate(CftModel<S>& model, const Dataset& ds) {
    if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<std::size_t> truths, preds;
    for (const auto& s : ds.samples) {
        Graph<S> g;
        auto out = forward_sample(g, model, s);
        truths.push_back(s.label);
        preds.push_back(predict(g, out));
    }
    return make_report(confusion_matrix(truths, preds, model.cfg.k));
}

// Late fusion of two already-trained single-stream models: per-sample head
// probabilities combined by the voting rule.
template <typename S>
EvalReport evaluate_voting(CftModel<S>& model_cf, CftModel<S>& model_if, const Dataset& ds,
                           VotingRule rule) {
    if (ds.samples.empty()) throw std::invalid_argument("evaluate_voting: empty dataset");
    if (!model_cf.cfg.has_cfp() || !model_if.cfg.has_ifp())
        throw std::invalid_argument("evaluate_voting: stream models on the wrong modalities");
    const std::size_t k = model_cf.cfg.k;
    std::vector<std::size_t> truths, preds;
    for (const auto& s : ds.samples) {
        Graph<S> ga, gb;
        auto oa = forward_sample(ga, model_cf, s);
        auto ob = forward_sample(gb, model_if, s);
        const auto& la = ga.value(oa.logits_cf);
        const auto& lb = gb.value(ob.logits_if);
        Tensor<S> pa(Shape{k}), pb(Shape{k});
        pa.data = softmax_vector(la.data);
        pb.data = softmax_vector(lb.data);
        truths.push_back(s.label);
        preds.push_back(voting_fuse(pa, pb, rule));
    }
    return make_report(confusion_matrix(truths, preds, k));
}

template <typename S>
struct TrainResult {
    TrainState<S> state;              // where training finished
    TrainState<S> best;               // highest validation kappa seen
    std::size_t best_epoch = 0;
    std::vector<EvalReport> reports;  // one per epoch run in this call
    std::vector<double> epoch_losses;
};

// Per-sample graphs with losses scaled by 1/batch, one Adam step per batch,
// cosine lr stepped per epoch, evaluation after every epoch. Resumes from
// `st` when given (its rng_state must be an epoch-boundary snapshot).
// on_epoch returning false stops after that epoch; the schedule stays pinned
// to tcfg.epochs, so a later resume continues with identical learning rates.
template <typename S>
TrainResult<S> train(const Dataset& ds_train, const Dataset& ds_val, const ModelConfig& mcfg,
                     const TrainConfig& tcfg, const TrainState<S>* resume = nullptr,
                     const std::function<bool(const TrainState<S>&, const EvalReport&)>& on_epoch =
                         nullptr) {
    tcfg.validate();
    mcfg.validate();
    if (ds_train.samples.empty()) throw std::invalid_argument("train: empty training set");

    TrainResult<S> result;
    if (resume != nullptr) {
        result.state = *resume;
        if (result.state.epoch >= tcfg.epochs)
            throw std::invalid_argument("train: resume epoch " +
                                        std::to_string(result.state.epoch) +
                                        " is not before epochs=" + std::to_string(tcfg.epochs));
    } else {
        result.state = TrainState<S>::init(mcfg, tcfg.seed);
        result.state.rng_state = Rng(Rng::derive(tcfg.seed, name_hash("data"))).state();
    }
    Rng rng(1);
    rng.set_state(result.state.rng_state);

    auto& st = result.state;
    double best_kappa = -2.0;
    std::vector<std::size_t> order(ds_train.samples.size());

    while (st.epoch < tcfg.epochs) {
        const double lr = cosine_lr(st.epoch, tcfg);
        // identity before every shuffle so the epoch's order depends only on
        // the rng state, keeping resumed runs bitwise identical
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + tcfg.batch_size);
            const auto batch_n = static_cast<double>(stop - start);
            st.model.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& raw = ds_train.samples[order[i]];
                const PairedSample s = tcfg.augment ? augment(raw, rng) : raw;
                Graph<S> g;
                auto out = forward_sample(g, st.model, s);
                auto losses = build_losses(g, out, s.label, tcfg.lambda, tcfg.enable_loss_cf,
                                           tcfg.enable_loss_if);
                auto scaled = g.scale(losses.total, static_cast<S>(1.0 / batch_n));
                g.backward(scaled);
                batch_loss += static_cast<double>(g.value(losses.total).data[0]) / batch_n;
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("non-finite training loss " + std::to_string(batch_loss) +
                                         " at epoch " + std::to_string(st.epoch) + ", step " +
                                         std::to_string(st.step));
            adam_step(st, lr, tcfg);
            loss_sum += batch_loss * batch_n;
        }
        st.epoch += 1;
        st.rng_state = rng.state();
        result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));

        auto report = evaluate(st.model, ds_val);
        result.reports.push_back(report);
        if (report.kappa > best_kappa) {
            best_kappa = report.kappa;
            result.best = st;
            result.best_epoch = st.epoch;
        }
        if (on_epoch && !on_epoch(st, report)) break;
    }
    return result;
}

// ---- model-level finite-difference audit ----

struct GradCheckCoord {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0, numeric = 0.0, rel = 0.0;
};

struct GradCheckReport {
    double max_rel = 0.0;
    double median_rel = 0.0;
    std::size_t n_coords = 0;
    double frac_below_1e4 = 0.0;
    std::vector<GradCheckCoord> coords;
    std::vector<GradCheckCoord> failures;  // rel above the failure threshold
};

// Central differences at h on >= min_coords coordinates covering every
// parameter tensor. Any coordinate over fail_threshold lands in `failures`
// with its parameter name.
template <typename S = double>
GradCheckReport grad_check(const ModelConfig& mcfg, const PairedSample& sample, double lambda,
                           bool enable_cf, bool enable_if, std::size_t min_coords = 200,
                           double h = 1e-4, double fail_threshold = 1e-3,
                           std::uint64_t seed = 1) {
    mcfg.validate();
    auto model = CftModel<S>::init(mcfg, seed);
    auto params = model.params();

    auto loss_value = [&]() {
        Graph<S> g;
        auto out = forward_sample(g, model, sample);
        auto losses = build_losses(g, out, sample.label, lambda, enable_cf, enable_if);
        return static_cast<double>(g.value(losses.total).data[0]);
    };

    model.zero_grad();
    {
        Graph<S> g;
        auto out = forward_sample(g, model, sample);
        auto losses = build_losses(g, out, sample.label, lambda, enable_cf, enable_if);
        g.backward(losses.total);
    }
    std::vector<Tensor<S>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    std::size_t total_numel = 0;
    for (auto* p : params) total_numel += p->value.numel();
    Rng rng(Rng::derive(seed, name_hash("gradcheck")));
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::size_t numel = params[pi]->value.numel();
        auto want = static_cast<std::size_t>(
            std::max<long long>(1, std::llround(static_cast<double>(min_coords) *
                                                static_cast<double>(numel) /
                                                static_cast<double>(total_numel))));
        want = std::min(want, numel);
        for (std::size_t j = 0; j < want; ++j) picks.emplace_back(pi, rng.below(numel));
    }
    while (picks.size() < min_coords) {
        const std::size_t pi = rng.below(params.size());
        picks.emplace_back(pi, rng.below(params[pi]->value.numel()));
    }

    GradCheckReport report;
    for (auto [pi, j] : picks) {
        auto& theta = params[pi]->value.data[j];
        const S saved = theta;
        theta = saved + static_cast<S>(h);
        const double up = loss_value();
        theta = saved - static_cast<S>(h);
        const double down = loss_value();
        theta = saved;

        GradCheckCoord c;
        c.param = params[pi]->name;
        c.index = j;
        c.analytic = static_cast<double>(analytic[pi].data[j]);
        c.numeric = (up - down) / (2.0 * h);
        const double scale = std::max(std::fabs(c.analytic), std::fabs(c.numeric));
        c.rel = scale < 1e-8 ? 0.0 : std::fabs(c.analytic - c.numeric) / scale;
        report.coords.push_back(c);
        if (c.rel > fail_threshold) report.failures.push_back(c);
    }

    std::vector<double> rels;
    std::size_t below = 0;
    for (const auto& c : report.coords) {
        rels.push_back(c.rel);
        report.max_rel = std::max(report.max_rel, c.rel);
        below += c.rel < 1e-4 ? 1 : 0;
    }
    std::sort(rels.begin(), rels.end());
    report.n_coords = rels.size();
    report.median_rel = rels.empty() ? 0.0 : rels[rels.size() / 2];
    report.frac_below_1e4 =
        rels.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(rels.size());
    return report;
}

// ---- checkpoints ----
// "CFTC", u32 manifest length, JSON manifest, then one raw little-endian
// value blob laid out per param as values, first moment, second moment.

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename S>
std::string serialize_checkpoint(TrainState<S>& st) {
    auto params = st.model.params();
    nlohmann::json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["precision"] = sizeof(S) * 8;
    manifest["step"] = st.step;
    manifest["epoch"] = st.epoch;
    manifest["rng_state"] = st.rng_state;
    nlohmann::json plist = nlohmann::json::array();
    std::size_t offset = 0;
    for (auto* p : params) {
        nlohmann::json e;
        e["name"] = p->name;
        e["shape"] = p->value.shape;
        e["offset"] = offset;
        plist.push_back(e);
        offset += 3 * p->value.numel();
    }
    manifest["params"] = plist;
    const std::string mjson = manifest.dump();

    std::string out = "CFTC";
    detail::put_le(out, static_cast<std::uint32_t>(mjson.size()));
    out += mjson;
    auto put_scalar = [&](S v) {
        if constexpr (sizeof(S) == 4) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_le(out, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_le(out, bits);
        }
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (S v : params[i]->value.data) put_scalar(v);
        for (S v : st.moments[i].m.data) put_scalar(v);
        for (S v : st.moments[i].v.data) put_scalar(v);
    }
    return out;
}

template <typename S>
TrainState<S> deserialize_checkpoint(const std::string& bytes, const ModelConfig& mcfg) {
    detail::ByteReader r{bytes};
    r.need(4);
    if (bytes.compare(0, 4, "CFTC") != 0)
        throw std::runtime_error("bad magic: not a CFT checkpoint");
    r.pos = 4;
    const auto mlen = r.get_le<std::uint32_t>();
    r.need(mlen);
    const auto manifest = nlohmann::json::parse(bytes.substr(r.pos, mlen));
    r.pos += mlen;

    if (manifest.at("version").get<std::uint16_t>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " +
                                 manifest.at("version").dump() + " unsupported");
    if (manifest.at("precision").get<std::size_t>() != sizeof(S) * 8)
        throw std::runtime_error("checkpoint precision " + manifest.at("precision").dump() +
                                 " does not match the requested " +
                                 std::to_string(sizeof(S) * 8) + "-bit load");

    auto st = TrainState<S>::init(mcfg, 0);
    st.step = manifest.at("step").get<std::size_t>();
    st.epoch = manifest.at("epoch").get<std::size_t>();
    st.rng_state = manifest.at("rng_state").get<std::string>();

    auto params = st.model.params();
    const auto& plist = manifest.at("params");
    if (plist.size() != params.size())
        throw std::runtime_error("checkpoint has " + std::to_string(plist.size()) +
                                 " params, model wants " + std::to_string(params.size()));
    auto get_scalar = [&]() -> S {
        if constexpr (sizeof(S) == 4) {
            auto bits = r.template get_le<std::uint32_t>();
            float v;
            std::memcpy(&v, &bits, 4);
            return v;
        } else {
            auto bits = r.template get_le<std::uint64_t>();
            double v;
            std::memcpy(&v, &bits, 8);
            return v;
        }
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = plist.at(i);
        if (e.at("name").get<std::string>() != params[i]->name)
            throw std::runtime_error("checkpoint param " + e.at("name").get<std::string>() +
                                     " does not match model param " + params[i]->name);
        if (e.at("shape").get<Shape>() != params[i]->value.shape)
            throw std::runtime_error("checkpoint shape mismatch on " + params[i]->name);
        for (auto& v : params[i]->value.data) v = get_scalar();
        for (auto& v : st.moments[i].m.data) v = get_scalar();
        for (auto& v : st.moments[i].v.data) v = get_scalar();
    }
    if (r.pos != bytes.size())
        throw std::runtime_error("checkpoint has trailing bytes");
    return st;
}

template <typename S>
void save_checkpoint(const std::string& path, TrainState<S>& st) {
    const std::string bytes = serialize_checkpoint(st);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

template <typename S>
TrainState<S> load_checkpoint(const std::string& path, const ModelConfig& mcfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint<S>(bytes, mcfg);
}

}  // namespace cft
