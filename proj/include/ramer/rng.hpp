#pragma once

#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>
#include <cmath>

namespace ramer {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable sub-stream derivation: master seed x tag x up to three indices.
// Every stochastic component of the pipeline draws from its own derived
// stream so results do not depend on evaluation order elsewhere.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a = 0, uint64_t b = 0,
                            uint64_t c = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : tag) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    uint64_t s = h ^ master;
    (void)splitmix64(s);
    s ^= a;
    (void)splitmix64(s);
    s ^= b;
    (void)splitmix64(s);
    s ^= c;
    return splitmix64(s);
}

// mt19937_64 engine (sequence fixed by the standard) with hand-rolled value
// mappings, so streams are reproducible across platforms and library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), rejection sampled
    uint64_t uniform_int(uint64_t n) {
        const uint64_t threshold = ~0ULL - ~0ULL % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= threshold);
        return x % n;
    }

    // Box-Muller, spare cached
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ramer
