#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cft {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic RNG. The engine is the standard mt19937_64; the
/// distributions are spelled out here because the std distribution
/// algorithms are implementation-defined and every number this library
/// emits must be reproducible bit for bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0,n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("rng: below(0)");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller, cosine branch only. Consumes two engine draws per call so
    /// the stream layout stays obvious.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0,1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Independent substream for item `index` (per-sample streams, per-group
    /// parameter init). Pure function of (seed, index).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
        return splitmix64(seed ^ splitmix64(index + 1));
    }

    Rng substream(std::uint64_t index) const { return Rng(derive(seed_, index)); }

    /// mt19937_64 state round-trips exactly through its textual form.
    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (!is) throw std::runtime_error("rng: bad serialized state");
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

/// Stable 64-bit name hash (FNV-1a), used to derive per-group init streams.
inline std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace cft
