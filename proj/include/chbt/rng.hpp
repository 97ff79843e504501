#pragma once
// chbt/rng.hpp - deterministic random sampling.
//
// All stochastic code in the library draws through Rng so that a 64-bit seed
// fully determines every stream, path and fit input. The samplers are written
// out explicitly (instead of using std::*_distribution) because the standard
// leaves those implementation-defined; mt19937_64 itself is fully specified.

#include <cmath>
#include <cstdint>
#include <random>

namespace chbt {

// One round of the splitmix64 mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable sub-seed derivation: mixes a base seed with up to three stream
// labels (sweep index, segment index, purpose tag).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = base;
    splitmix64(s);
    s ^= a + 0x632be59bd9b4e019ULL;
    splitmix64(s);
    s ^= b + 0xd6e8feb86659fd93ULL;
    splitmix64(s);
    s ^= c + 0xa5a348f0a7c9b1e5ULL;
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via the polar (Marsaglia) method; one spare cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * scale;
        have_spare_ = true;
        return u * scale;
    }

    // Exponential inter-arrival gap for a Poisson process of the given rate.
    double exponential(double rate) { return -std::log(1.0 - uniform()) / rate; }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace chbt
