#include <catch2/catch_amalgamated.hpp>

#include <cft/trainer.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

using cft::CfaMode;
using cft::Dataset;
using cft::ModelConfig;
using cft::PairedSample;
using cft::StreamSet;
using cft::TrainConfig;
using cft::TrainState;

namespace {

ModelConfig tiny_config(CfaMode mode, StreamSet streams) {
    ModelConfig cfg;
    cfg.cfp.H = cfg.cfp.W = 16;
    cfg.cfp.p = 8;
    cfg.cfp.C_e = 4;
    cfg.cfp.depth = 1;
    cfg.cfp.n_heads_enc = 2;
    cfg.cfp.mlp_ratio = 2;
    cfg.ifp = cfg.cfp;
    cfg.cfa.L = 4;
    cfg.cfa.d = 4;
    cfg.cfa.n_heads = 2;
    cfg.cfa.mode = mode;
    cfg.k = 3;
    cfg.streams = streams;
    return cfg;
}

cft::SynthConfig tiny_data_cfg(std::size_t n, std::uint64_t seed) {
    cft::SynthConfig cfg;
    cfg.n_samples = n;
    cfg.H = cfg.W = 16;
    cfg.C_in = 1;
    cfg.k = 3;
    cfg.gamma = 0.5;
    cfg.sigma = 0.4;
    cfg.seed = seed;
    return cfg;
}

TrainConfig fast_train(std::size_t epochs, std::uint64_t seed) {
    TrainConfig t;
    t.epochs = epochs;
    t.base_lr = 1e-3;
    t.batch_size = 8;
    t.seed = seed;
    return t;
}

bool params_equal(TrainState<double>& a, TrainState<double>& b) {
    auto pa = a.model.params(), pb = b.model.params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!(pa[i]->value == pb[i]->value) || pa[i]->name != pb[i]->name) return false;
    return true;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
    TrainConfig t;
    t.epochs = 30;
    t.base_lr = 1e-4;
    CHECK(cft::cosine_lr(0, t) == 1e-4);
    CHECK(cft::cosine_lr(30, t) == 0.0);
    CHECK(std::fabs(cft::cosine_lr(15, t) - 5e-5) < 1e-19);
    CHECK_THROWS_AS(cft::cosine_lr(31, t), std::out_of_range);

    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.epochs = 10;
    t.lambda = 1.5;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.lambda = 0.5;
    t.precision_bits = 16;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("adam step reproduces the hand recurrence") {
    auto st = TrainState<double>::init(tiny_config(CfaMode::None, StreamSet::Cf), 3);
    st.model.zero_grad();
    TrainConfig t;
    t.weight_decay = 0.0;

    // one coordinate with theta=1, g=1: bias correction gives mhat=vhat=1,
    // so theta drops to 1 - lr/(1+eps) which is 0.9 within 1e-8
    auto params = st.model.params();
    auto& p = *params[0];
    p.value.data[0] = 1.0;
    p.grad.data[0] = 1.0;
    const auto before = st.model.params()[1]->value;
    cft::adam_step(st, 0.1, t);
    CHECK(std::fabs(p.value.data[0] - 0.9) < 1e-8);
    CHECK(st.step == 1);
    // zero-gradient coordinates stay bitwise put when wd is 0
    CHECK(st.model.params()[1]->value == before);
}

TEST_CASE("weight decay alone scales parameters by (1 - lr*wd) per step") {
    auto st = TrainState<double>::init(tiny_config(CfaMode::None, StreamSet::Cf), 3);
    st.model.zero_grad();
    TrainConfig t;
    t.weight_decay = 1e-5;

    auto params = st.model.params();
    std::vector<double> start;
    for (auto* p : params) start.push_back(p->value.data[0]);
    cft::adam_step(st, 0.1, t);
    cft::adam_step(st, 0.1, t);
    const double c = 0.1 * 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double expect = start[i];
        expect -= c * expect;  // same arithmetic as the update, twice
        expect -= c * expect;
        CHECK(params[i]->value.data[0] == expect);
        CHECK(std::fabs(params[i]->value.data[0] - start[i] * (1.0 - c) * (1.0 - c)) <=
              1e-15 * std::fabs(start[i]) + 1e-300);
    }

    // moments must mirror param shapes
    st.moments.pop_back();
    CHECK_THROWS_AS(cft::adam_step(st, 0.1, t), std::invalid_argument);
}

TEST_CASE("training is bitwise deterministic") {
    auto ds = cft::generate_dataset(tiny_data_cfg(16, 5));
    auto [tr, val] = cft::stratified_split(ds, 0.5, 5);
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto tcfg = fast_train(1, 7);

    auto r1 = cft::train<double>(tr, val, mcfg, tcfg);
    auto r2 = cft::train<double>(tr, val, mcfg, tcfg);
    REQUIRE(r1.reports.size() == 1);
    CHECK(r1.reports[0].kappa == r2.reports[0].kappa);
    CHECK(r1.reports[0].accuracy == r2.reports[0].accuracy);
    CHECK(r1.reports[0].confusion.counts == r2.reports[0].confusion.counts);
    CHECK(r1.epoch_losses == r2.epoch_losses);
    CHECK(params_equal(r1.state, r2.state));

    auto tcfg2 = fast_train(1, 8);
    auto r3 = cft::train<double>(tr, val, mcfg, tcfg2);
    CHECK_FALSE(params_equal(r1.state, r3.state));
}

TEST_CASE("training loss decreases on a small run") {
    auto ds = cft::generate_dataset(tiny_data_cfg(200, 11));
    auto [tr, val] = cft::stratified_split(ds, 0.8, 11);
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto tcfg = fast_train(5, 13);

    auto r = cft::train<float>(tr, val, mcfg, tcfg);
    REQUIRE(r.epoch_losses.size() == 5);
    INFO("losses " << r.epoch_losses.front() << " .. " << r.epoch_losses.back());
    CHECK(r.epoch_losses[4] < r.epoch_losses[0]);
    for (double l : r.epoch_losses) CHECK(std::isfinite(l));
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= 5);
}

TEST_CASE("disabled stream losses freeze their heads") {
    auto ds = cft::generate_dataset(tiny_data_cfg(16, 17));
    auto [tr, val] = cft::stratified_split(ds, 0.5, 17);
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto tcfg = fast_train(1, 19);
    tcfg.weight_decay = 0.0;  // decay would move frozen params too
    tcfg.lambda = 1.0;
    tcfg.enable_loss_if = false;

    auto init = TrainState<double>::init(mcfg, tcfg.seed);
    auto r = cft::train<double>(tr, val, mcfg, tcfg);

    auto after = r.state.model.params();
    auto before = init.model.params();
    for (std::size_t i = 0; i < after.size(); ++i) {
        const bool frozen = after[i]->name.rfind("head_if.", 0) == 0;
        if (frozen) {
            CHECK(after[i]->value == before[i]->value);
        }
    }
    // the trained head moved
    bool cf_head_moved = false;
    for (std::size_t i = 0; i < after.size(); ++i)
        if (after[i]->name.rfind("head_cf.", 0) == 0 && !(after[i]->value == before[i]->value))
            cf_head_moved = true;
    CHECK(cf_head_moved);

    // both ablation flags off: every head frozen, classifier still learns
    tcfg.enable_loss_cf = false;
    tcfg.lambda = 0.6;
    auto r2 = cft::train<double>(tr, val, mcfg, tcfg);
    auto after2 = r2.state.model.params();
    bool cls_moved = false;
    for (std::size_t i = 0; i < after2.size(); ++i) {
        const bool head = after2[i]->name.rfind("head_cf.", 0) == 0 ||
                          after2[i]->name.rfind("head_if.", 0) == 0;
        if (head) CHECK(after2[i]->value == before[i]->value);
        if (after2[i]->name.rfind("cls.", 0) == 0 && !(after2[i]->value == before[i]->value))
            cls_moved = true;
    }
    CHECK(cls_moved);
}

TEST_CASE("evaluate is consistent with its own confusion matrix") {
    auto ds = cft::generate_dataset(tiny_data_cfg(30, 23));
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto model = cft::CftModel<double>::init(mcfg, 29);
    auto report = cft::evaluate(model, ds);
    CHECK(report.n_samples == 30);
    CHECK(report.kappa == cft::quadratic_weighted_kappa(report.confusion));
    auto [acc, f1] = cft::accuracy_and_macro_f1(report.confusion);
    CHECK(report.accuracy == acc);
    CHECK(report.macro_f1 == f1);

    Dataset empty;
    empty.config = ds.config;
    CHECK_THROWS_AS(cft::evaluate(model, empty), std::invalid_argument);
}

TEST_CASE("a constant-class model scores 1/k accuracy on a balanced set") {
    auto mcfg = tiny_config(CfaMode::None, StreamSet::Cf);
    auto model = cft::CftModel<double>::init(mcfg, 31);
    // zero the head readout and bias it toward class 1: logits constant
    for (auto& v : model.head_cf->w2.value.data) v = 0.0;
    model.head_cf->b2.value.data[1] = 10.0;

    Dataset ds;
    ds.config = tiny_data_cfg(12, 0);
    cft::Rng rng(37);
    for (std::size_t i = 0; i < 12; ++i) {
        PairedSample s;
        s.label = static_cast<std::uint8_t>(i % 3);
        s.cfp = cft::Tensor<float>::zeros({16, 16, 1});
        for (auto& v : s.cfp.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
        s.ifp = s.cfp;
        ds.samples.push_back(s);
    }
    auto report = cft::evaluate(model, ds);
    CHECK(report.accuracy == Catch::Approx(1.0 / 3.0));
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p)
            CHECK(report.confusion.at(t, p) == (p == 1 ? 4 : 0));
}

TEST_CASE("voting evaluation fuses two single-stream models") {
    auto ds = cft::generate_dataset(tiny_data_cfg(20, 41));
    auto cf_model = cft::CftModel<double>::init(tiny_config(CfaMode::None, StreamSet::Cf), 43);
    auto if_model = cft::CftModel<double>::init(tiny_config(CfaMode::None, StreamSet::If), 47);
    auto rep_max = cft::evaluate_voting(cf_model, if_model, ds, cft::VotingRule::Max);
    auto rep_avg = cft::evaluate_voting(cf_model, if_model, ds, cft::VotingRule::Average);
    CHECK(rep_max.n_samples == 20);
    CHECK(rep_avg.n_samples == 20);
    CHECK(std::isfinite(rep_max.kappa));
    CHECK(std::isfinite(rep_avg.kappa));

    CHECK_THROWS_AS(cft::evaluate_voting(if_model, cf_model, ds, cft::VotingRule::Max),
                    std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bitwise and resume seamlessly") {
    auto ds = cft::generate_dataset(tiny_data_cfg(24, 53));
    auto [tr, val] = cft::stratified_split(ds, 0.75, 53);
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);

    // straight 4-epoch run
    auto tcfg4 = fast_train(4, 59);
    auto straight = cft::train<double>(tr, val, mcfg, tcfg4);

    // same 4-epoch schedule stopped after 2, serialize, reload, finish
    auto stop_after_two = [](const cft::TrainState<double>& st, const cft::EvalReport&) {
        return st.epoch < 2;
    };
    auto half = cft::train<double>(tr, val, mcfg, tcfg4, nullptr, stop_after_two);
    CHECK(half.state.epoch == 2);
    auto bytes = cft::serialize_checkpoint(half.state);
    auto restored = cft::deserialize_checkpoint<double>(bytes, mcfg);
    CHECK(restored.step == half.state.step);
    CHECK(restored.epoch == 2);
    CHECK(restored.rng_state == half.state.rng_state);
    CHECK(params_equal(restored, half.state));
    for (std::size_t i = 0; i < restored.moments.size(); ++i) {
        CHECK(restored.moments[i].m == half.state.moments[i].m);
        CHECK(restored.moments[i].v == half.state.moments[i].v);
    }

    auto resumed = cft::train<double>(tr, val, mcfg, tcfg4, &restored);
    REQUIRE(resumed.reports.size() == 2);
    CHECK(params_equal(resumed.state, straight.state));
    CHECK(resumed.reports[0].kappa == straight.reports[2].kappa);
    CHECK(resumed.reports[1].kappa == straight.reports[3].kappa);
    CHECK(resumed.epoch_losses[0] == straight.epoch_losses[2]);
    CHECK(resumed.epoch_losses[1] == straight.epoch_losses[3]);

    // file round-trip too
    const std::string path = "test_trainer_ckpt.cftc";
    cft::save_checkpoint(path, half.state);
    auto from_file = cft::load_checkpoint<double>(path, mcfg);
    CHECK(params_equal(from_file, half.state));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects corrupt or mismatched inputs") {
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto st = TrainState<double>::init(mcfg, 61);
    st.rng_state = cft::Rng(1).state();
    auto bytes = cft::serialize_checkpoint(st);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH(cft::deserialize_checkpoint<double>(bad_magic, mcfg),
                      Catch::Matchers::ContainsSubstring("magic"));

    CHECK_THROWS_WITH(cft::deserialize_checkpoint<float>(bytes, mcfg),
                      Catch::Matchers::ContainsSubstring("precision"));

    auto trailing = bytes + "x";
    CHECK_THROWS_WITH(cft::deserialize_checkpoint<double>(trailing, mcfg),
                      Catch::Matchers::ContainsSubstring("trailing"));

    auto other = tiny_config(CfaMode::None, StreamSet::Cf);
    CHECK_THROWS_AS(cft::deserialize_checkpoint<double>(bytes, other), std::runtime_error);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    auto ds = cft::generate_dataset(tiny_data_cfg(8, 67));
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto tcfg = fast_train(1, 67);
    tcfg.base_lr = 1e12;  // blows the parameters up within the first epoch

    bool threw = false;
    try {
        auto r = cft::train<float>(ds, ds, mcfg, tcfg);
        // a single diverged epoch may still finish; push further
        cft::TrainConfig more = tcfg;
        more.epochs = 6;
        auto st = r.state;
        cft::train<float>(ds, ds, mcfg, more, &st);
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("model gradient audit passes on the tiny dual model") {
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto ds = cft::generate_dataset(tiny_data_cfg(1, 71));
    auto report = cft::grad_check<double>(mcfg, ds.samples[0], 0.6, true, true, 200);
    INFO("max " << report.max_rel << " median " << report.median_rel << " coords "
                << report.n_coords);
    CHECK(report.n_coords >= 200);
    CHECK(report.failures.empty());
    CHECK(report.max_rel < 1e-3);
    CHECK(report.frac_below_1e4 >= 0.99);

    // every parameter tensor must be touched
    auto model = cft::CftModel<double>::init(mcfg, 1);
    for (auto* p : model.params()) {
        bool seen = false;
        for (const auto& c : report.coords)
            if (c.param == p->name) seen = true;
        INFO("param " << p->name);
        CHECK(seen);
    }
}

TEST_CASE("gradient audit reports exact zeros for disconnected heads") {
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    auto ds = cft::generate_dataset(tiny_data_cfg(1, 73));
    auto report = cft::grad_check<double>(mcfg, ds.samples[0], 0.0, true, true, 200);
    std::size_t cf_coords = 0;
    for (const auto& c : report.coords) {
        if (c.param.rfind("head_cf.", 0) == 0) {
            ++cf_coords;
            CHECK(c.analytic == 0.0);
            CHECK(c.numeric == 0.0);
        }
    }
    CHECK(cf_coords > 0);
}

TEST_CASE("finite differences shrink like h squared") {
    auto mcfg = tiny_config(CfaMode::DualCross, StreamSet::Both);
    // the h^2 law assumes a smooth objective; max fusion and the projection
    // relu both have kinks where a perturbation flips a branch, so test on
    // the mean path with projection off
    mcfg.cfa.fusion = cft::Fusion::Mean;
    mcfg.cfa.projection = false;
    auto ds = cft::generate_dataset(tiny_data_cfg(1, 79));
    auto fine = cft::grad_check<double>(mcfg, ds.samples[0], 0.6, true, true, 200, 1e-4);
    auto coarse = cft::grad_check<double>(mcfg, ds.samples[0], 0.6, true, true, 200, 2e-4);

    auto mean_nonzero = [](const cft::GradCheckReport& r) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& c : r.coords)
            if (c.rel > 1e-9) {
                sum += c.rel;
                ++n;
            }
        return n == 0 ? 0.0 : sum / static_cast<double>(n);
    };
    const double ratio = mean_nonzero(coarse) / mean_nonzero(fine);
    INFO("truncation ratio " << ratio << " (4 is the pure h^2 prediction)");
    CHECK(ratio > 1.5);
    CHECK(ratio < 10.0);
}
