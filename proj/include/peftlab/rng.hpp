// SPDX-License-Identifier: Apache-2.0
//
// Seeded RNG helpers. mt19937_64 output is fully specified by the standard;
// the distribution transforms here are written out so that streams are
// reproducible across standard libraries (std::*_distribution is not).

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace peftlab {

class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double next_double() { return (double) (engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    int64_t next_index(int64_t n) { return (int64_t)(engine_() % (uint64_t) n); }

    // Standard normal via Box-Muller.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Weighted pick over non-negative integer weights; total must be positive.
    size_t next_weighted(const std::vector<int64_t> & weights) {
        int64_t total = 0;
        for (int64_t w : weights) total += w;
        int64_t r = (int64_t)(engine_() % (uint64_t) total);
        for (size_t i = 0; i < weights.size(); ++i) {
            r -= weights[i];
            if (r < 0) return i;
        }
        return weights.size() - 1;
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = (size_t) next_index((int64_t) i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace peftlab
