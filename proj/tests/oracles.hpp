// Brute-force reference computations for the test suites. Everything here is
// re-derived from first principles, independent of the library code paths it
// checks, so a shared bug cannot hide.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "polytrack/geometry.hpp"

namespace oracle {

inline double huber(double x) {
    const double a = std::abs(x);
    return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1(polytrack::Vec2 d) { return huber(d.x) + huber(d.y); }

inline double dist(polytrack::Vec2 a, polytrack::Vec2 b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Min over all cyclic shifts, each shift summed directly.
inline double point_set_matching(const std::vector<polytrack::Vec2>& gt,
                                 const std::vector<polytrack::Vec2>& pred) {
    const std::size_t n = gt.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += smooth_l1(gt[(k + i) % n] - pred[i]);
        best = std::min(best, s);
    }
    return best;
}

// Full pairwise distance table, averaged per direction by each set's size.
inline double chamfer(const std::vector<polytrack::Vec2>& gt,
                      const std::vector<polytrack::Vec2>& pred) {
    double a = 0.0;
    for (const auto& g : gt) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& p : pred) m = std::min(m, dist(g, p));
        a += m;
    }
    double b = 0.0;
    for (const auto& p : pred) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& g : gt) m = std::min(m, dist(p, g));
        b += m;
    }
    return a / static_cast<double>(gt.size()) + b / static_cast<double>(pred.size());
}

inline double reg_first(const std::vector<polytrack::Vec2>& prev,
                        const std::vector<polytrack::Vec2>& cur) {
    const std::size_t n = prev.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i + n - 1) % n;
        const double d = dist(cur[i], cur[j]) - dist(prev[i], prev[j]);
        s += d * d;
    }
    return s;
}

inline double reg_second(const std::vector<polytrack::Vec2>& prev,
                         const std::vector<polytrack::Vec2>& cur) {
    const std::size_t n = prev.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t im1 = (i + n - 1) % n, ip1 = (i + 1) % n;
        const polytrack::Vec2 dc = cur[ip1] - 2.0 * cur[i] + cur[im1];
        const polytrack::Vec2 dp = prev[ip1] - 2.0 * prev[i] + prev[im1];
        s += std::hypot(dc.x - dp.x, dc.y - dp.y);
    }
    return s;
}

// Weighted-average translation, the MLS fallback for degenerate controls.
inline polytrack::Vec2 weighted_translation(polytrack::Vec2 v,
                                            const std::vector<polytrack::Vec2>& src,
                                            const std::vector<polytrack::Vec2>& dst) {
    double wsum = 0.0;
    polytrack::Vec2 t{0.0, 0.0};
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double d2 = (src[i].x - v.x) * (src[i].x - v.x) +
                          (src[i].y - v.y) * (src[i].y - v.y);
        const double w = 1.0 / d2;
        wsum += w;
        t = t + w * (dst[i] - src[i]);
    }
    return v + (1.0 / wsum) * t;
}

}  // namespace oracle
