#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace daf {

// Deterministic, portable RNG. std::mt19937_64 is bit-exact across platforms
// but the standard distributions are not, so the distributions here are
// hand-rolled on top of the raw 64-bit stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // Derive an independent stream from (seed, tags...). Used to give every
    // sample / epoch / purpose its own reproducible stream regardless of
    // threading or evaluation order.
    static uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t x = seed;
        x = splitmix(x + 0x9e3779b97f4a7c15ull * (a + 1));
        x = splitmix(x + 0x9e3779b97f4a7c15ull * (b + 1));
        x = splitmix(x + 0x9e3779b97f4a7c15ull * (c + 1));
        return x;
    }

    uint64_t next_u64() {
        // xorshift64* keeps the state small and is fully portable.
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    int range(int lo, int hi_inclusive) {
        return lo + int(below(uint64_t(hi_inclusive - lo + 1)));
    }

    // Standard normal via Box-Muller (no caching, deterministic call order).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t state_;
};

}  // namespace daf
