#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace vwerc {

// Deterministic random source. All distributions are derived from the raw
// mt19937_64 stream with explicit arithmetic so that a fixed seed reproduces
// the same values on any platform, independent of the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : s_(splitmix(seed)), s1_(splitmix(s_ ^ 0x9e3779b97f4a7c15ull)) {}

    std::uint64_t next_u64() {
        // xoshiro-style mix on two splitmix-seeded words; period is ample for
        // desk-scale experiments and the update is branch-free.
        std::uint64_t x = s_;
        const std::uint64_t y = s1_;
        s_ = y;
        x ^= x << 23;
        s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
        return s1_ + y;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(uniform()) * (hi - lo);
    }

    // Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller; the second deviate is cached.
    float normal(float mean = 0.0f, float sd = 1.0f) {
        if (has_cached_) {
            has_cached_ = false;
            return mean + sd * cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = static_cast<float>(r * std::sin(theta));
        has_cached_ = true;
        return mean + sd * static_cast<float>(r * std::cos(theta));
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t s_;
    std::uint64_t s1_;
    float cached_ = 0.0f;
    bool has_cached_ = false;
};

} // namespace vwerc
