#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "seqdistill/errors.hpp"

namespace seqdistill {

namespace detail {

// splitmix64 step; the whole library draws randomness through this so that
// results are identical across platforms and standard-library versions.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Derives an independent stream seed from a base seed and one or two stream
// tags. Used for hierarchical seeding (per epoch, per sample, per layer) so
// that consuming one stream never shifts another.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = base;
    std::uint64_t x = detail::splitmix64(s);
    s = x ^ (a * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL);
    x = detail::splitmix64(s);
    s = x ^ (b * 0xc2b2ae3d27d4eb4fULL + 0x27d4eb2f165667c5ULL);
    return detail::splitmix64(s);
}

// Deterministic, platform-stable random generator.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that near-equal seeds decorrelate immediately.
        detail::splitmix64(state_);
        detail::splitmix64(state_);
    }

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller; consumes exactly two draws per call.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 1.0 - uniform01(); // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw DomainError("Rng::below: n must be positive");
        return next_u64() % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

  private:
    std::uint64_t state_;
};

} // namespace seqdistill
