#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lab {

// Deterministic RNG wrapper. The distribution transforms are hand-rolled so
// that streams do not depend on the standard library's unspecified
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of entropy.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection sampling keeps the stream unbiased.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    int uniform_index(std::size_t n) { return static_cast<int>(uniform_int(static_cast<uint64_t>(n))); }

    // Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - uniform();  // (0, 1]
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 6.283185307179586 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent child stream; used to give parallel trials their
    // own seeds without coupling them to call order.
    uint64_t fork(uint64_t salt) {
        uint64_t x = engine_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace lab
