#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace flats {

// Deterministic RNG used everywhere. All distributions are hand-rolled on top
// of the mt19937_64 bit stream so results are identical across compilers and
// standard libraries (std::uniform_real_distribution et al. are not portable).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n >= 1, rejection-free modulo bias is
    // negligible for the small n used here but we reject anyway
    int randint(int n) {
        uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<int>(x % static_cast<uint64_t>(n));
    }

    bool coin() { return (gen_() & 1u) != 0; }

    // standard normal via Box-Muller; draws two uniforms per call
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Marsaglia-Tsang gamma sampler, shape alpha > 0, scale 1
    double gamma(double alpha) {
        if (alpha < 1.0) {
            // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        double d = alpha - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // symmetric Dirichlet over k categories
    std::vector<double> dirichlet(double concentration, int k) {
        std::vector<double> p(k);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            p[i] = gamma(concentration);
            sum += p[i];
        }
        if (sum <= 0.0) {
            for (auto& v : p) v = 1.0 / k;
        } else {
            for (auto& v : p) v /= sum;
        }
        return p;
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = randint(i + 1);
            std::swap(v[i], v[static_cast<size_t>(j)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// splitmix64-style mixing; used to derive independent per-round / per-client
// sub-seeds from one master seed so parallel schedules cannot change results
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(seed, a, b), c);
}

}  // namespace flats
