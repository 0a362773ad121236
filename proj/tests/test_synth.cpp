#include <catch2/catch_amalgamated.hpp>

#include <cft/metrics.hpp>
#include <cft/rng.hpp>
#include <cft/synth.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using cft::Dataset;
using cft::PairedSample;
using cft::SynthConfig;

namespace {

SynthConfig small_cfg(std::size_t n, double gamma, double sigma, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_samples = n;
    cfg.H = 32;
    cfg.W = 32;
    cfg.C_in = 1;
    cfg.k = 5;
    cfg.gamma = gamma;
    cfg.sigma = sigma;
    cfg.seed = seed;
    return cfg;
}

// Softmax regression on split-polarity 2x2-average-pooled pixels, full-batch
// gradient descent. Cells are centered on their training mean (kills the
// vignette), then split into positive and negative deviation channels so a
// linear model can count dark and bright lesions without the two cancelling.
double probe_accuracy(const Dataset& train, const Dataset& val, bool use_cfp) {
    const std::size_t H = train.config.H / 2, W = train.config.W / 2;
    const std::size_t cells = H * W;
    const std::size_t dim = 2 * cells;
    const std::size_t k = train.config.k;

    auto pooled = [&](const PairedSample& s) {
        const auto& img = use_cfp ? s.cfp : s.ifp;
        std::vector<double> f(cells);
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c)
                f[r * W + c] = 0.25 * (img.at3(2 * r, 2 * c, 0) + img.at3(2 * r, 2 * c + 1, 0) +
                                       img.at3(2 * r + 1, 2 * c, 0) +
                                       img.at3(2 * r + 1, 2 * c + 1, 0));
        return f;
    };

    std::vector<double> mean(cells, 0.0);
    std::vector<std::vector<double>> raw;
    for (const auto& s : train.samples) {
        raw.push_back(pooled(s));
        for (std::size_t d = 0; d < cells; ++d) mean[d] += raw.back()[d];
    }
    for (auto& m : mean) m /= static_cast<double>(raw.size());

    auto split = [&](const std::vector<double>& p) {
        std::vector<double> f(dim);
        for (std::size_t d = 0; d < cells; ++d) {
            const double v = p[d] - mean[d];
            f[2 * d] = std::max(0.0, v);
            f[2 * d + 1] = std::max(0.0, -v);
        }
        return f;
    };

    std::vector<std::vector<double>> X;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        X.push_back(split(raw[i]));
        y.push_back(train.samples[i].label);
    }

    std::vector<double> weight(k * dim, 0.0), bias(k, 0.0);
    const double n_inv = 1.0 / static_cast<double>(X.size());
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<double> gw(k * dim, 0.0), gb(k, 0.0);
        for (std::size_t i = 0; i < X.size(); ++i) {
            std::vector<double> logits(k);
            for (std::size_t c = 0; c < k; ++c) {
                double z = bias[c];
                for (std::size_t d = 0; d < dim; ++d) z += weight[c * dim + d] * X[i][d];
                logits[c] = z;
            }
            double m = logits[0];
            for (double z : logits) m = std::max(m, z);
            double denom = 0.0;
            for (double z : logits) denom += std::exp(z - m);
            for (std::size_t c = 0; c < k; ++c) {
                const double p = std::exp(logits[c] - m) / denom;
                const double g = (p - (c == y[i] ? 1.0 : 0.0)) * n_inv;
                gb[c] += g;
                for (std::size_t d = 0; d < dim; ++d) gw[c * dim + d] += g * X[i][d];
            }
        }
        for (std::size_t j = 0; j < weight.size(); ++j) weight[j] -= 2.0 * gw[j];
        for (std::size_t c = 0; c < k; ++c) bias[c] -= 2.0 * gb[c];
    }

    std::size_t hits = 0;
    for (const auto& s : val.samples) {
        auto f = split(pooled(s));
        std::size_t best = 0;
        double best_z = -1e300;
        for (std::size_t c = 0; c < k; ++c) {
            double z = bias[c];
            for (std::size_t d = 0; d < dim; ++d) z += weight[c * dim + d] * f[d];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        hits += best == s.label ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(val.samples.size());
}

Dataset balanced_toy(std::size_t per_class, std::size_t k) {
    Dataset ds;
    ds.config.n_samples = per_class * k;
    ds.config.H = 8;
    ds.config.W = 8;
    ds.config.C_in = 1;
    ds.config.k = k;
    std::size_t idx = 0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            PairedSample s;
            s.label = static_cast<std::uint8_t>(c);
            s.cfp = cft::Tensor<float>::full({8, 8, 1}, static_cast<float>(idx) / 1000.0F);
            s.ifp = s.cfp;
            ds.samples.push_back(s);
            ++idx;
        }
    return ds;
}

}  // namespace

TEST_CASE("generation is bitwise deterministic per seed") {
    auto cfg = small_cfg(20, 0.5, 0.5, 7);
    auto a = cft::generate_dataset(cfg);
    auto b = cft::generate_dataset(cfg);
    REQUIRE(a.samples.size() == 20);
    CHECK(a == b);

    cfg.seed = 8;
    auto c = cft::generate_dataset(cfg);
    CHECK_FALSE(a == c);
}

TEST_CASE("generated samples are well-formed") {
    auto ds = cft::generate_dataset(small_cfg(60, 0.7, 0.8, 3));
    std::size_t labeled = 0;
    for (const auto& s : ds.samples) {
        REQUIRE(s.cfp.shape == cft::Shape{32, 32, 1});
        REQUIRE(s.ifp.shape == cft::Shape{32, 32, 1});
        CHECK(s.label < 5);
        for (float v : s.cfp.data) {
            REQUIRE(v >= 0.0F);
            REQUIRE(v <= 1.0F);
        }
        for (float v : s.ifp.data) {
            REQUIRE(v >= 0.0F);
            REQUIRE(v <= 1.0F);
        }
        ++labeled;
    }
    auto hist = ds.label_histogram();
    std::size_t total = 0;
    for (auto h : hist) total += h;
    CHECK(total == labeled);

    SynthConfig bad = small_cfg(10, 1.5, 0.5, 1);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_cfg(10, 0.5, -1.0, 1);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = small_cfg(10, 0.5, 0.5, 1);
    bad.H = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("grade zero plants nothing and haze only touches the first modality") {
    auto cfg = small_cfg(40, 1.0, 0.0, 11);
    auto ds = cft::generate_dataset(cfg);
    // sigma=0: cfp keeps its unhazed background; any grade-0 pair has no
    // lesions, so both images are pure background and differ only by base.
    for (const auto& s : ds.samples) {
        if (s.label != 0) continue;
        for (std::size_t i = 0; i < s.cfp.data.size(); ++i) {
            // both modalities carry independent noise, so allow its width
            CHECK(std::fabs((s.cfp.data[i] - s.ifp.data[i]) - 0.1F) < 0.05F);
        }
        break;
    }
}

TEST_CASE("stratified split keeps class proportions and stays disjoint") {
    auto ds = balanced_toy(20, 5);
    auto [train, val] = cft::stratified_split(ds, 0.8, 42);
    CHECK(train.samples.size() == 80);
    CHECK(val.samples.size() == 20);
    auto th = train.label_histogram();
    auto vh = val.label_histogram();
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(th[c] == 16);
        CHECK(vh[c] == 4);
    }

    // samples carry unique fill values, so payload overlap is detectable
    std::vector<float> seen;
    for (const auto& s : train.samples) seen.push_back(s.cfp.data[0]);
    for (const auto& s : val.samples) seen.push_back(s.cfp.data[0]);
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());

    // determinism
    auto [train2, val2] = cft::stratified_split(ds, 0.8, 42);
    CHECK(train2 == train);
    CHECK(val2 == val);
    auto [train3, val3] = cft::stratified_split(ds, 0.8, 43);
    CHECK_FALSE(train3 == train);
}

TEST_CASE("split boundary rules") {
    // a class that would round to zero validation samples still gets one
    auto tiny = balanced_toy(2, 3);
    auto [train, val] = cft::stratified_split(tiny, 0.9, 1);
    auto vh = val.label_histogram();
    for (std::size_t c = 0; c < 3; ++c) CHECK(vh[c] == 1);
    auto th = train.label_histogram();
    for (std::size_t c = 0; c < 3; ++c) CHECK(th[c] == 1);

    // a singleton class cannot be split
    auto bad = balanced_toy(2, 3);
    bad.samples.pop_back();
    CHECK_THROWS_AS(cft::stratified_split(bad, 0.8, 1), std::invalid_argument);
    CHECK_THROWS_AS(cft::stratified_split(tiny, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(cft::stratified_split(tiny, 0.0, 1), std::invalid_argument);
}

TEST_CASE("identity augmentation is a bitwise no-op") {
    auto ds = cft::generate_dataset(small_cfg(3, 0.5, 0.5, 5));
    auto out = cft::augment(ds.samples[0], cft::AugmentParams::identity());
    CHECK(out == ds.samples[0]);
}

TEST_CASE("horizontal flip is an involution") {
    auto ds = cft::generate_dataset(small_cfg(3, 0.5, 0.5, 9));
    cft::AugmentParams flip;
    flip.hflip = true;
    auto once = cft::augment(ds.samples[1], flip);
    CHECK_FALSE(once == ds.samples[1]);
    auto twice = cft::augment(once, flip);
    CHECK(twice == ds.samples[1]);
}

TEST_CASE("augmentation is deterministic per rng state") {
    auto ds = cft::generate_dataset(small_cfg(2, 0.5, 0.5, 13));
    cft::Rng r1(99), r2(99);
    auto a = cft::augment(ds.samples[0], r1);
    auto b = cft::augment(ds.samples[0], r2);
    CHECK(a == b);
    auto c = cft::augment(ds.samples[0], r1);  // advanced state, new draw
    CHECK_FALSE(a == c);
}

TEST_CASE("geometric transforms keep the pair co-registered") {
    // plant a bright marker at the same spot in both modalities; after any
    // shared warp its brightest pixel must land on the same coordinates
    cft::Rng rng(21);
    auto brightest = [](const cft::Tensor<float>& img) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < img.data.size(); ++i)
            if (img.data[i] > img.data[best]) best = i;
        return best;
    };
    for (int trial = 0; trial < 10; ++trial) {
        // identical inputs through one draw must stay bitwise identical: the
        // warp is shared, so any per-modality geometry would show up here
        PairedSample s;
        s.cfp = cft::Tensor<float>::full({32, 32, 1}, 0.1F);
        const std::size_t mr = 8 + rng.below(16), mc = 8 + rng.below(16);
        for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc) s.cfp.at3(mr + dr, mc + dc, 0) = 1.0F;
        s.ifp = s.cfp;
        auto p = cft::draw_augment(rng, 32, 32);
        p.bright_cf = p.bright_if = 0.0;
        p.contrast_cf = p.contrast_if = 1.0;
        auto out = cft::augment(s, p);
        CHECK(out.cfp == out.ifp);
        CHECK(out.label == s.label);

        // semantic version on distinct backgrounds: the marker may win the
        // argmax at a float-tie off-by-one, never further
        PairedSample t;
        t.cfp = cft::Tensor<float>::full({32, 32, 1}, 0.1F);
        t.ifp = cft::Tensor<float>::full({32, 32, 1}, 0.2F);
        for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc) {
                t.cfp.at3(mr + dr, mc + dc, 0) = 1.0F;
                t.ifp.at3(mr + dr, mc + dc, 0) = 0.9F;
            }
        auto out2 = cft::augment(t, p);
        const auto a = brightest(out2.cfp), b = brightest(out2.ifp);
        const auto ar = a / 32, ac = a % 32, br = b / 32, bc = b % 32;
        CHECK(std::max(ar > br ? ar - br : br - ar, ac > bc ? ac - bc : bc - ac) <= 1);
    }
}

TEST_CASE("oversized crops are rejected") {
    auto ds = cft::generate_dataset(small_cfg(1, 0.5, 0.5, 2));
    cft::AugmentParams p;
    p.crop_h = 40;
    p.crop_w = 16;
    CHECK_THROWS_AS(cft::augment(ds.samples[0], p), std::invalid_argument);
    p.crop_h = 16;
    p.crop_row0 = 20;  // box runs past the bottom edge
    CHECK_THROWS_AS(cft::augment(ds.samples[0], p), std::invalid_argument);
}

TEST_CASE("dataset files round-trip bitwise") {
    auto ds = cft::generate_dataset(small_cfg(12, 0.6, 0.7, 17));
    const std::string path = "test_synth_roundtrip.cftd";
    cft::save_dataset(path, ds);
    auto back = cft::load_dataset(path);
    CHECK(back == ds);

    // a second save of the loaded dataset must produce identical bytes
    const std::string path2 = "test_synth_roundtrip2.cftd";
    cft::save_dataset(path2, back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("empty dataset round-trips") {
    Dataset ds;
    ds.config = small_cfg(0, 0.5, 0.5, 1);
    const std::string path = "test_synth_empty.cftd";
    cft::save_dataset(path, ds);
    auto back = cft::load_dataset(path);
    CHECK(back.samples.empty());
    CHECK(back.config.H == 32);
    CHECK(back.config.k == 5);
    std::remove(path.c_str());
}

TEST_CASE("corrupt dataset files raise distinct errors") {
    auto ds = cft::generate_dataset(small_cfg(2, 0.5, 0.5, 23));
    const std::string path = "test_synth_corrupt.cftd";
    cft::save_dataset(path, ds);
    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();

    auto rewrite = [&](const std::string& b) {
        std::ofstream o(path, std::ios::binary | std::ios::trunc);
        o.write(b.data(), static_cast<std::streamsize>(b.size()));
    };

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    rewrite(bad_magic);
    CHECK_THROWS_AS(cft::load_dataset(path), cft::BadMagicError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    rewrite(bad_version);
    CHECK_THROWS_AS(cft::load_dataset(path), cft::VersionMismatchError);

    std::string truncated = bytes.substr(0, bytes.size() / 2);
    rewrite(truncated);
    CHECK_THROWS_AS(cft::load_dataset(path), cft::TruncatedFileError);

    std::string trailing = bytes + "junk";
    rewrite(trailing);
    CHECK_THROWS_AS(cft::load_dataset(path), cft::DatasetFormatError);
    std::remove(path.c_str());
}

TEST_CASE("pilot probe: gamma 0 puts every lesion in the first modality") {
    auto ds = cft::generate_dataset(small_cfg(500, 0.0, 0.5, 31));
    auto [train, val] = cft::stratified_split(ds, 0.8, 31);
    double acc_cf = probe_accuracy(train, val, true);
    double acc_if = probe_accuracy(train, val, false);
    INFO("cfp probe " << acc_cf << ", ifp probe " << acc_if);
    CHECK(acc_cf > 0.4);   // full count, readable through moderate haze
    CHECK(acc_if < 0.3);   // pure background, near the 0.2 chance floor
}

TEST_CASE("pilot probe: gamma 1 puts every lesion in the second modality") {
    auto ds = cft::generate_dataset(small_cfg(500, 1.0, 1.0, 37));
    auto [train, val] = cft::stratified_split(ds, 0.8, 37);
    double acc_cf = probe_accuracy(train, val, true);
    double acc_if = probe_accuracy(train, val, false);
    INFO("cfp probe " << acc_cf << ", ifp probe " << acc_if);
    CHECK(acc_cf < 0.3);   // nothing to see even before the haze
    CHECK(acc_if > 0.45);  // the clear modality holds the full count
}

TEST_CASE("pilot probe: gamma 0.7 splits the count so neither stream suffices") {
    auto ds = cft::generate_dataset(small_cfg(500, 0.7, 0.5, 41));
    auto [train, val] = cft::stratified_split(ds, 0.8, 41);
    double acc_cf = probe_accuracy(train, val, true);
    double acc_if = probe_accuracy(train, val, false);
    INFO("cfp probe " << acc_cf << ", ifp probe " << acc_if);
    CHECK(acc_cf > 0.25);  // the 0.3-fraction still clears chance
    CHECK(acc_if > acc_cf);
    CHECK(acc_if < 0.75);  // the 0.7-fraction alone cannot pin the grade
}
