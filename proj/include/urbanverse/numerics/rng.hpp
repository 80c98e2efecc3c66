#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace uv::num {

// Splittable deterministic generator. A root Rng is built from a 64-bit seed;
// independent substreams are derived by hashing a (label, a, b) key into the
// state, so every (module, purpose) pair gets its own stream and the overall
// behavior is reproducible regardless of scheduling.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x6A09E667F3BCC908ull)) {}

    Rng derive(std::string_view label, uint64_t a = 0, uint64_t b = 0) const {
        uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a over the label
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        uint64_t s = state_;
        s = mix(s ^ h);
        s = mix(s ^ (a + 0x9E3779B97F4A7C15ull));
        s = mix(s ^ (b + 0xBF58476D1CE4E5B9ull));
        Rng r(0);
        r.state_ = s;
        return r;
    }

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (cos branch only, fixed draw order).
    double normal() {
        const double u = 1.0 - uniform();
        const double theta = 6.283185307179586476925286766559 * uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    int uniformInt(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Sample k distinct indices from [0, n) (partial Fisher-Yates).
    std::vector<int> sampleWithoutReplacement(int n, int k) {
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        if (k > n) k = n;
        std::vector<int> out;
        out.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            const size_t j = static_cast<size_t>(i) + static_cast<size_t>(below(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[j]);
            out.push_back(pool[static_cast<size_t>(i)]);
        }
        return out;
    }

    int poisson(double lambda) {
        // Knuth for small lambda, normal approximation above 30.
        if (lambda <= 0.0) return 0;
        if (lambda > 30.0) {
            const double v = std::floor(normal(lambda, std::sqrt(lambda)) + 0.5);
            return v < 0.0 ? 0 : static_cast<int>(v);
        }
        const double limit = std::exp(-lambda);
        double p = 1.0;
        int k = 0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

private:
    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    uint64_t state_;
};

}  // namespace uv::num
