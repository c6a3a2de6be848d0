// rng.hpp
//
// Self-contained pseudo-random generator (xoshiro256++) with the sampling
// routines the toolkit needs: uniform, Gaussian, gamma and inverse-gamma
// draws. std:: distributions are avoided so that streams are reproducible
// across standard libraries; substreams are derived by hashing
// (seed, stream index), which keeps per-voxel / per-chain work order-free.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace perfusion {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
} // namespace detail

// Disjoint substream spaces per purpose, so e.g. a voxel's noise draws and
// its fit restarts never share a stream even under the same master seed.
namespace stream_tag {
inline constexpr std::uint64_t noise = 1;
inline constexpr std::uint64_t nlls = 2;
inline constexpr std::uint64_t chain = 3;
inline constexpr std::uint64_t warm = 4;
inline constexpr std::uint64_t settle = 5;
inline std::uint64_t make(std::uint64_t tag, std::uint64_t index) { return (tag << 32) | index; }
} // namespace stream_tag

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = detail::splitmix64(sm);
    }

    // Independent stream derived from (seed, stream). Used for voxels,
    // restarts and chains so results do not depend on execution order.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t sm = seed;
        std::uint64_t a = detail::splitmix64(sm);
        sm = stream * 0xD1342543DE82EF95ULL + 0x2545F4914F6CDD1DULL;
        return a ^ detail::splitmix64(sm);
    }
    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(derive(seed, stream));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    // uniform on [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal, Marsaglia polar method
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    // gamma(shape, scale), Marsaglia-Tsang squeeze; shape boosting below 1
    double gamma(double shape, double scale) {
        if (shape < 1.0) {
            const double u = std::fmax(uniform(), 1e-300);
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

    // inverse-gamma(shape, scale): 1/X with X ~ gamma(shape, 1/scale)
    double inv_gamma(double shape, double scale) {
        return 1.0 / gamma(shape, 1.0 / scale);
    }

private:
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace perfusion
