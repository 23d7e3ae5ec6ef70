#pragma once

#include <cstdint>
#include <random>

namespace polytrack {

// Seeded generator with hand-rolled value mappings. std::mt19937_64 output
// is pinned by the standard, but the std distributions are not, so every
// draw goes through explicit arithmetic to keep streams identical across
// platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Symmetric range [-r, r].
    double jitter(double r) { return uniform(-r, r); }

    // Inclusive [lo, hi], unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0) return static_cast<std::int64_t>(gen_());  // full 64-bit span
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % range);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace polytrack
