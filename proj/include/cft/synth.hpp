#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <cft/rng.hpp>
#include <cft/tensor.hpp>

namespace cft {

// Paired-modality generator. Grade g plants g lesions; each lesion is visible
// in exactly one modality, the second (ifp) with probability gamma, otherwise
// the first (cfp). The grade is therefore the cross-stream lesion count and
// neither image alone recovers it. The first modality additionally suffers a
// haze: an additive gray veil plus Gaussian blur, strength sigma.
struct SynthConfig {
    std::size_t n_samples = 2000;
    std::size_t H = 32, W = 32, C_in = 1;
    std::size_t k = 5;
    double gamma = 0.7;
    double sigma = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (H < 8 || W < 8) throw std::invalid_argument("synth extents must be at least 8x8");
        if (C_in == 0) throw std::invalid_argument("synth needs at least one channel");
        if (k < 2) throw std::invalid_argument("synth needs at least two grades");
        if (!(gamma >= 0.0 && gamma <= 1.0))
            throw std::invalid_argument("gamma must lie in [0,1], got " + std::to_string(gamma));
        if (!(sigma >= 0.0))
            throw std::invalid_argument("sigma must be nonnegative, got " + std::to_string(sigma));
    }
};

struct PairedSample {
    Tensor<float> cfp;
    Tensor<float> ifp;
    std::uint8_t label = 0;

    bool operator==(const PairedSample& o) const {
        return label == o.label && cfp == o.cfp && ifp == o.ifp;
    }
};

struct Dataset {
    SynthConfig config;  // gamma/sigma/seed record how the data was made; files do not keep them
    std::vector<PairedSample> samples;

    std::vector<std::size_t> label_histogram() const {
        std::vector<std::size_t> h(config.k, 0);
        for (const auto& s : samples) ++h.at(s.label);
        return h;
    }

    // Payload equality: extents, class count, and every sample bitwise.
    bool operator==(const Dataset& o) const {
        return config.H == o.config.H && config.W == o.config.W && config.C_in == o.config.C_in &&
               config.k == o.config.k && samples == o.samples;
    }
};

namespace detail {

// Contrast constants, frozen together with the pilot-probe baselines. The
// cfp figure is slightly below the ifp one because the haze veil re-dims it
// anyway; both sit far enough above the background noise to stay countable.
inline constexpr float kCfpContrast = 0.9F;
inline constexpr float kIfpContrast = 1.0F;
inline constexpr double kVeilPerSigma = 0.4;
inline constexpr double kBlurPerSigma = 1.5;

inline float clamp01(float v) { return std::min(1.0F, std::max(0.0F, v)); }

inline void gaussian_blur(Tensor<float>& img, std::size_t H, std::size_t W, std::size_t C,
                          double sigma_px) {
    if (sigma_px <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma_px)));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * (i / sigma_px) * (i / sigma_px));
        kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
        norm += w;
    }
    for (auto& w : kernel) w = static_cast<float>(w / norm);

    Tensor<float> tmp = img;
    const auto iw = static_cast<std::ptrdiff_t>(W);
    const auto ih = static_cast<std::ptrdiff_t>(H);
    for (std::size_t ch = 0; ch < C; ++ch) {
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                float acc = 0.0F;
                for (int i = -radius; i <= radius; ++i) {
                    auto cc = std::clamp(static_cast<std::ptrdiff_t>(c) + i, std::ptrdiff_t{0},
                                         iw - 1);
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           img.at3(r, static_cast<std::size_t>(cc), ch);
                }
                tmp.at3(r, c, ch) = acc;
            }
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                float acc = 0.0F;
                for (int i = -radius; i <= radius; ++i) {
                    auto rr = std::clamp(static_cast<std::ptrdiff_t>(r) + i, std::ptrdiff_t{0},
                                         ih - 1);
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           tmp.at3(static_cast<std::size_t>(rr), c, ch);
                }
                img.at3(r, c, ch) = acc;
            }
    }
}

enum class Lesion { Hemorrhage, Exudate, Arc };

struct LesionDraw {
    Lesion kind;
    double cr, cc, ar, br, amp;
    double arc_start, arc_extent;  // arcs only
    bool in_ifp;
};

inline void render_lesion(Tensor<float>& img, const SynthConfig& cfg, const LesionDraw& l,
                          float contrast) {
    if (contrast == 0.0F) return;
    const double sign = l.kind == Lesion::Hemorrhage ? -1.0 : 1.0;
    // amplitude normalized by footprint so every lesion deposits roughly the
    // same integrated mass; the count signal then dominates size variance
    const double norm = l.kind == Lesion::Arc ? 1.5 * 3.5 / std::sqrt(l.ar * l.br)
                                              : 12.25 / (l.ar * l.br);
    const double amp = l.amp * norm;
    for (std::size_t r = 0; r < cfg.H; ++r)
        for (std::size_t c = 0; c < cfg.W; ++c) {
            const double dr = (static_cast<double>(r) - l.cr) / l.ar;
            const double dc = (static_cast<double>(c) - l.cc) / l.br;
            const double rho2 = dr * dr + dc * dc;
            double fall = 0.0;
            if (l.kind == Lesion::Arc) {
                const double rho = std::sqrt(rho2);
                const double band = 1.0 - std::fabs(rho - 1.0) / 0.3;
                if (band <= 0.0) continue;
                double ang = std::atan2(dr, dc) - l.arc_start;
                while (ang < 0.0) ang += 2.0 * 3.14159265358979323846;
                if (ang > l.arc_extent) continue;
                fall = band * band;
            } else {
                if (rho2 >= 1.0) continue;
                const double core = 1.0 - rho2;
                fall = core * core;
            }
            const auto delta = static_cast<float>(sign * amp * fall) * contrast;
            for (std::size_t ch = 0; ch < cfg.C_in; ++ch) img.at3(r, c, ch) += delta;
        }
}

inline PairedSample generate_sample(const SynthConfig& cfg, std::size_t index) {
    Rng rng(Rng::derive(cfg.seed, index));
    PairedSample s;
    s.label = static_cast<std::uint8_t>(rng.below(cfg.k));
    s.cfp = Tensor<float>::zeros({cfg.H, cfg.W, cfg.C_in});
    s.ifp = Tensor<float>::zeros({cfg.H, cfg.W, cfg.C_in});

    const double cy = 0.5 * static_cast<double>(cfg.H - 1);
    const double cx = 0.5 * static_cast<double>(cfg.W - 1);
    for (std::size_t r = 0; r < cfg.H; ++r)
        for (std::size_t c = 0; c < cfg.W; ++c) {
            const double ny = (static_cast<double>(r) - cy) / (0.5 * static_cast<double>(cfg.H));
            const double nx = (static_cast<double>(c) - cx) / (0.5 * static_cast<double>(cfg.W));
            const auto vignette = static_cast<float>(0.12 * (ny * ny + nx * nx));
            for (std::size_t ch = 0; ch < cfg.C_in; ++ch) {
                s.cfp.at3(r, c, ch) = 0.55F - vignette;
                s.ifp.at3(r, c, ch) = 0.45F - vignette;
            }
        }
    for (auto& v : s.cfp.data) v += static_cast<float>(rng.uniform(-0.02, 0.02));
    for (auto& v : s.ifp.data) v += static_cast<float>(rng.uniform(-0.02, 0.02));

    const auto grade = static_cast<std::size_t>(s.label);
    // radii kept tight so the normalized amplitude stays well above the noise
    const double max_radius =
        std::min(4.2, std::max(3.5, static_cast<double>(std::min(cfg.H, cfg.W)) / 8.0));
    for (std::size_t i = 0; i < grade; ++i) {
        LesionDraw l;
        switch (rng.below(3)) {
            case 0: l.kind = Lesion::Hemorrhage; break;
            case 1: l.kind = Lesion::Exudate; break;
            default: l.kind = Lesion::Arc; break;
        }
        l.cr = rng.uniform(3.0, static_cast<double>(cfg.H) - 4.0);
        l.cc = rng.uniform(3.0, static_cast<double>(cfg.W) - 4.0);
        l.ar = rng.uniform(3.0, max_radius);
        l.br = rng.uniform(3.0, max_radius);
        l.amp = rng.uniform(0.35, 0.5);
        l.arc_start = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        l.arc_extent = rng.uniform(0.6, 1.2) * 3.14159265358979323846;
        // Bernoulli split: each lesion lands in one stream only, so neither
        // stream alone carries the count and the grade is only recoverable
        // by summing evidence across both.
        l.in_ifp = rng.bernoulli(cfg.gamma);

        if (l.in_ifp)
            render_lesion(s.ifp, cfg, l, kIfpContrast);
        else
            render_lesion(s.cfp, cfg, l, kCfpContrast);
    }

    if (cfg.sigma > 0.0) {
        const auto veil = static_cast<float>(std::min(1.0, kVeilPerSigma * cfg.sigma));
        for (auto& v : s.cfp.data) v = (1.0F - veil) * v + veil * 0.5F;
        gaussian_blur(s.cfp, cfg.H, cfg.W, cfg.C_in, kBlurPerSigma * cfg.sigma);
    }
    for (auto& v : s.cfp.data) v = clamp01(v);
    for (auto& v : s.ifp.data) v = clamp01(v);
    return s;
}

}  // namespace detail

inline Dataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.samples.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i)
        ds.samples.push_back(detail::generate_sample(cfg, i));
    return ds;
}

// Per-class split. Every class needs at least 2 samples so both sides stay
// populated; validation takes max(1, round(n_c * (1 - train_frac))).
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double train_frac,
                                                    std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("train_frac must lie strictly inside (0,1)");
    const std::size_t k = ds.config.k;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        by_class.at(ds.samples[i].label).push_back(i);

    std::vector<bool> in_val(ds.samples.size(), false);
    for (std::size_t c = 0; c < k; ++c) {
        auto& idx = by_class[c];
        if (idx.size() < 2)
            throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                        std::to_string(idx.size()) + " samples; need at least 2");
        Rng rng(Rng::derive(seed, c));
        rng.shuffle(idx);
        auto n_val = static_cast<std::size_t>(std::max<long long>(
            1, std::llround((1.0 - train_frac) * static_cast<double>(idx.size()))));
        n_val = std::min(n_val, idx.size() - 1);
        for (std::size_t i = 0; i < n_val; ++i) in_val[idx[i]] = true;
    }

    Dataset train, val;
    train.config = ds.config;
    val.config = ds.config;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        (in_val[i] ? val : train).samples.push_back(ds.samples[i]);
    train.config.n_samples = train.samples.size();
    val.config.n_samples = val.samples.size();
    return {std::move(train), std::move(val)};
}

// One shared geometric warp (flip, crop-with-resize, rotation/scale/shift)
// keeps the pair co-registered; photometric jitter is per modality. The
// default-constructed value is the identity draw.
struct AugmentParams {
    bool hflip = false;
    std::size_t crop_h = 0, crop_w = 0;  // 0 means the full extent
    std::size_t crop_row0 = 0, crop_col0 = 0;
    double angle_rad = 0.0, scale = 1.0, shift_r = 0.0, shift_c = 0.0;
    double bright_cf = 0.0, contrast_cf = 1.0;
    double bright_if = 0.0, contrast_if = 1.0;

    static AugmentParams identity() { return {}; }

    bool geometry_is_identity(std::size_t H, std::size_t W) const {
        const bool full_crop = (crop_h == 0 || crop_h == H) && (crop_w == 0 || crop_w == W) &&
                               crop_row0 == 0 && crop_col0 == 0;
        return !hflip && full_crop && angle_rad == 0.0 && scale == 1.0 && shift_r == 0.0 &&
               shift_c == 0.0;
    }
};

inline AugmentParams draw_augment(Rng& rng, std::size_t H, std::size_t W) {
    AugmentParams p;
    p.hflip = rng.bernoulli(0.5);
    const double keep = rng.uniform(0.8, 1.0);
    p.crop_h = std::max<std::size_t>(1, static_cast<std::size_t>(
                                            std::llround(keep * static_cast<double>(H))));
    p.crop_w = std::max<std::size_t>(1, static_cast<std::size_t>(
                                            std::llround(keep * static_cast<double>(W))));
    p.crop_h = std::min(p.crop_h, H);
    p.crop_w = std::min(p.crop_w, W);
    p.crop_row0 = rng.below(H - p.crop_h + 1);
    p.crop_col0 = rng.below(W - p.crop_w + 1);
    p.angle_rad = rng.uniform(-0.1745, 0.1745);
    p.scale = rng.uniform(0.9, 1.1);
    p.shift_r = rng.uniform(-2.0, 2.0);
    p.shift_c = rng.uniform(-2.0, 2.0);
    p.bright_cf = rng.uniform(-0.1, 0.1);
    p.contrast_cf = rng.uniform(0.9, 1.1);
    p.bright_if = rng.uniform(-0.1, 0.1);
    p.contrast_if = rng.uniform(0.9, 1.1);
    return p;
}

namespace detail {

inline float bilinear(const Tensor<float>& img, std::size_t H, std::size_t W, std::size_t ch,
                      double sr, double sc) {
    sr = std::clamp(sr, 0.0, static_cast<double>(H - 1));
    sc = std::clamp(sc, 0.0, static_cast<double>(W - 1));
    const auto r0 = static_cast<std::size_t>(sr);
    const auto c0 = static_cast<std::size_t>(sc);
    const std::size_t r1 = std::min(r0 + 1, H - 1);
    const std::size_t c1 = std::min(c0 + 1, W - 1);
    const auto fr = static_cast<float>(sr - static_cast<double>(r0));
    const auto fc = static_cast<float>(sc - static_cast<double>(c0));
    const float top = (1.0F - fc) * img.at3(r0, c0, ch) + fc * img.at3(r0, c1, ch);
    const float bot = (1.0F - fc) * img.at3(r1, c0, ch) + fc * img.at3(r1, c1, ch);
    return (1.0F - fr) * top + fr * bot;
}

inline Tensor<float> warp(const Tensor<float>& img, std::size_t H, std::size_t W, std::size_t C,
                          const AugmentParams& p) {
    Tensor<float> out = Tensor<float>::zeros({H, W, C});
    const std::size_t ch_h = p.crop_h == 0 ? H : p.crop_h;
    const std::size_t ch_w = p.crop_w == 0 ? W : p.crop_w;
    const double cy = 0.5 * static_cast<double>(H - 1);
    const double cx = 0.5 * static_cast<double>(W - 1);
    const double cosa = std::cos(p.angle_rad), sina = std::sin(p.angle_rad);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            // rotation/scale/shift inverse, about the image center
            const double vr = static_cast<double>(r) - cy - p.shift_r;
            const double vc = static_cast<double>(c) - cx - p.shift_c;
            double qr = (cosa * vr - sina * vc) / p.scale + cy;
            double qc = (sina * vr + cosa * vc) / p.scale + cx;
            // crop box mapped back onto the full frame, pixel centers aligned
            qr = static_cast<double>(p.crop_row0) +
                 (qr + 0.5) * static_cast<double>(ch_h) / static_cast<double>(H) - 0.5;
            qc = static_cast<double>(p.crop_col0) +
                 (qc + 0.5) * static_cast<double>(ch_w) / static_cast<double>(W) - 0.5;
            if (p.hflip) qc = static_cast<double>(W - 1) - qc;
            for (std::size_t chn = 0; chn < C; ++chn)
                out.at3(r, c, chn) = bilinear(img, H, W, chn, qr, qc);
        }
    return out;
}

inline void jitter(Tensor<float>& img, double bright, double contrast) {
    if (bright == 0.0 && contrast == 1.0) return;
    for (auto& v : img.data)
        v = clamp01(static_cast<float>(contrast * (v - 0.5) + 0.5 + bright));
}

}  // namespace detail

inline PairedSample augment(const PairedSample& s, const AugmentParams& p) {
    const auto& shape = s.cfp.shape;
    if (shape.size() != 3) throw std::invalid_argument("augment expects H x W x C samples");
    const std::size_t H = shape[0], W = shape[1], C = shape[2];
    if (p.crop_h > H || p.crop_w > W || p.crop_row0 + (p.crop_h == 0 ? H : p.crop_h) > H ||
        p.crop_col0 + (p.crop_w == 0 ? W : p.crop_w) > W)
        throw std::invalid_argument("crop box exceeds the image");

    PairedSample out;
    out.label = s.label;
    if (p.geometry_is_identity(H, W)) {
        out.cfp = s.cfp;
        out.ifp = s.ifp;
    } else {
        out.cfp = detail::warp(s.cfp, H, W, C, p);
        out.ifp = detail::warp(s.ifp, H, W, C, p);
    }
    detail::jitter(out.cfp, p.bright_cf, p.contrast_cf);
    detail::jitter(out.ifp, p.bright_if, p.contrast_if);
    return out;
}

inline PairedSample augment(const PairedSample& s, Rng& rng) {
    return augment(s, draw_augment(rng, s.cfp.shape.at(0), s.cfp.shape.at(1)));
}

// ---- dataset file format ----
// "CFTD", version u16, n u32, H u32, W u32, C u32, k u16, all little-endian;
// then per sample: label u8, cfp floats, ifp floats (IEEE-754 LE).

struct DatasetFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : DatasetFormatError {
    using DatasetFormatError::DatasetFormatError;
};
struct VersionMismatchError : DatasetFormatError {
    using DatasetFormatError::DatasetFormatError;
};
struct TruncatedFileError : DatasetFormatError {
    using DatasetFormatError::DatasetFormatError;
};

inline constexpr std::uint16_t kDatasetVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(buf, bits);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw TruncatedFileError("dataset file truncated at byte " + std::to_string(pos));
    }
    template <typename T>
    T get_le() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += sizeof(T);
        return static_cast<T>(v);
    }
    float get_f32() {
        auto bits = get_le<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::string buf;
    buf.reserve(64 + ds.samples.size() * (1 + 8 * ds.config.H * ds.config.W * ds.config.C_in));
    buf += "CFTD";
    detail::put_le(buf, kDatasetVersion);
    detail::put_le(buf, static_cast<std::uint32_t>(ds.samples.size()));
    detail::put_le(buf, static_cast<std::uint32_t>(ds.config.H));
    detail::put_le(buf, static_cast<std::uint32_t>(ds.config.W));
    detail::put_le(buf, static_cast<std::uint32_t>(ds.config.C_in));
    detail::put_le(buf, static_cast<std::uint16_t>(ds.config.k));
    for (const auto& s : ds.samples) {
        detail::put_le(buf, static_cast<std::uint8_t>(s.label));
        for (float v : s.cfp.data) detail::put_f32(buf, v);
        for (float v : s.ifp.data) detail::put_f32(buf, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r{buf};
    r.need(4);
    if (buf.compare(0, 4, "CFTD") != 0)
        throw BadMagicError("bad magic in " + path + ": not a CFTD dataset");
    r.pos = 4;
    const auto version = r.get_le<std::uint16_t>();
    if (version != kDatasetVersion)
        throw VersionMismatchError("dataset version " + std::to_string(version) +
                                   ", expected " + std::to_string(kDatasetVersion));
    const auto n = r.get_le<std::uint32_t>();
    const auto H = r.get_le<std::uint32_t>();
    const auto W = r.get_le<std::uint32_t>();
    const auto C = r.get_le<std::uint32_t>();
    const auto k = r.get_le<std::uint16_t>();
    if (H == 0 || W == 0 || C == 0 || k == 0)
        throw DatasetFormatError("dataset header has zero extents");

    Dataset ds;
    ds.config.n_samples = n;
    ds.config.H = H;
    ds.config.W = W;
    ds.config.C_in = C;
    ds.config.k = k;
    const std::size_t pixels = static_cast<std::size_t>(H) * W * C;
    ds.samples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        PairedSample s;
        s.label = r.get_le<std::uint8_t>();
        if (s.label >= k)
            throw DatasetFormatError("sample " + std::to_string(i) + " label " +
                                     std::to_string(s.label) + " not below k=" +
                                     std::to_string(k));
        s.cfp = Tensor<float>::zeros({H, W, C});
        s.ifp = Tensor<float>::zeros({H, W, C});
        for (std::size_t p = 0; p < pixels; ++p) s.cfp.data[p] = r.get_f32();
        for (std::size_t p = 0; p < pixels; ++p) s.ifp.data[p] = r.get_f32();
        ds.samples.push_back(std::move(s));
    }
    if (r.pos != buf.size())
        throw DatasetFormatError("dataset file has " + std::to_string(buf.size() - r.pos) +
                                 " trailing bytes");
    return ds;
}

}  // namespace cft
