#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"

namespace polytrack {

struct LossValue {
    double value = 0.0;
    std::optional<std::vector<Vec2>> grad;
};

namespace detail {

// h(x) = 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise (per coordinate).
inline double smooth_l1_1d(double x) {
    const double a = std::abs(x);
    return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_1d_grad(double x) {
    const double a = std::abs(x);
    if (a < 1.0) return x;
    return x > 0.0 ? 1.0 : -1.0;
}

}  // namespace detail

inline double smooth_l1(Vec2 d) {
    return detail::smooth_l1_1d(d.x) + detail::smooth_l1_1d(d.y);
}

inline Vec2 smooth_l1_grad(Vec2 d) {
    return {detail::smooth_l1_1d_grad(d.x), detail::smooth_l1_1d_grad(d.y)};
}

// Minimum over all cyclic shifts k of sum_i smooth_l1(gt[(k+i)%N] - pred[i]).
// Gradient (w.r.t. pred) is that of the arg-min shift, ties to smallest k.
inline LossValue point_set_matching_loss(const PointSet& gt, const PointSet& pred) {
    const std::size_t n = gt.size();
    if (n != pred.size())
        throw SizeMismatch("point_set_matching_loss: point counts differ");
    if (n == 0) throw SizeMismatch("point_set_matching_loss: empty point sets");

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += smooth_l1(gt.points[(k + i) % n] - pred.points[i]);
        if (s < best) {
            best = s;
            best_k = k;
        }
    }

    LossValue out;
    out.value = best;
    out.grad.emplace(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 g = smooth_l1_grad(gt.points[(best_k + i) % n] - pred.points[i]);
        (*out.grad)[i] = {-g.x, -g.y};  // d/d pred of h(gt - pred)
    }
    return out;
}

// Mean over masked pixels of the Euclidean norm of the channel-wise
// difference. No point gradient; the tracker differentiates through the
// warp instead.
inline LossValue pixel_matching_loss(const FrameImage& cur, const FrameImage& warped_prev,
                                     const FrameImage& mask) {
    if (!cur.same_shape(warped_prev))
        throw SizeMismatch("pixel_matching_loss: image shapes differ");
    if (mask.width != cur.width || mask.height != cur.height || mask.channels != 1)
        throw SizeMismatch("pixel_matching_loss: mask shape mismatch");

    std::size_t k = 0;
    double sum = 0.0;
    for (int y = 0; y < cur.height; ++y) {
        for (int x = 0; x < cur.width; ++x) {
            if (!detail::is_foreground(mask.at(x, y))) continue;
            double sq = 0.0;
            for (int c = 0; c < cur.channels; ++c) {
                const double d = cur.at(x, y, c) - warped_prev.at(x, y, c);
                sq += d * d;
            }
            sum += std::sqrt(sq);
            ++k;
        }
    }
    if (k == 0) throw EmptyMask("pixel_matching_loss: mask selects no pixel");
    return {sum / static_cast<double>(k), std::nullopt};
}

// sum_i smooth_l1(gt[i] - pred[i]); gradient w.r.t. pred.
inline LossValue paired_l1_loss(const PointSet& gt, const PointSet& pred) {
    const std::size_t n = gt.size();
    if (n != pred.size()) throw SizeMismatch("paired_l1_loss: point counts differ");

    LossValue out;
    out.grad.emplace(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 d = gt.points[i] - pred.points[i];
        out.value += smooth_l1(d);
        const Vec2 g = smooth_l1_grad(d);
        (*out.grad)[i] = {-g.x, -g.y};
    }
    return out;
}

// Symmetric Chamfer distance, each directed sum normalized by its own set
// size. Nearest-neighbor ties resolve to the smallest index; a zero
// distance contributes a zero subgradient.
inline LossValue chamfer_loss(const PointSet& gt, const PointSet& pred) {
    const std::size_t ng = gt.size(), np = pred.size();
    if (ng == 0 || np == 0) throw EmptySet("chamfer_loss: empty point set");

    LossValue out;
    out.grad.emplace(np, Vec2{0.0, 0.0});

    // gt -> pred: each gt point pulls its nearest prediction.
    for (std::size_t i = 0; i < ng; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bj = 0;
        for (std::size_t j = 0; j < np; ++j) {
            const double d = norm(gt.points[i] - pred.points[j]);
            if (d < best) {
                best = d;
                bj = j;
            }
        }
        out.value += best / static_cast<double>(ng);
        if (best > 0.0) {
            const Vec2 u = (1.0 / best) * (pred.points[bj] - gt.points[i]);
            (*out.grad)[bj] += (1.0 / static_cast<double>(ng)) * u;
        }
    }

    // pred -> gt: each prediction is pulled toward its nearest gt point.
    for (std::size_t j = 0; j < np; ++j) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t i = 0; i < ng; ++i) {
            const double d = norm(gt.points[i] - pred.points[j]);
            if (d < best) {
                best = d;
                bi = i;
            }
        }
        out.value += best / static_cast<double>(np);
        if (best > 0.0) {
            const Vec2 u = (1.0 / best) * (pred.points[j] - gt.points[bi]);
            (*out.grad)[j] += (1.0 / static_cast<double>(np)) * u;
        }
    }
    return out;
}

// Squared change of every cyclic edge length between prev and cur.
// Gradient w.r.t. cur.
inline LossValue reg_first_derivative(const PointSet& prev, const PointSet& cur) {
    const std::size_t n = prev.size();
    if (n != cur.size()) throw SizeMismatch("reg_first_derivative: point counts differ");
    if (n < 3) throw SizeMismatch("reg_first_derivative: needs N >= 3");

    LossValue out;
    out.grad.emplace(n, Vec2{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t im1 = (i + n - 1) % n;
        const Vec2 e_cur = cur.points[i] - cur.points[im1];
        const Vec2 e_prev = prev.points[i] - prev.points[im1];
        const double lc = norm(e_cur);
        const double lp = norm(e_prev);
        const double diff = lc - lp;
        out.value += diff * diff;
        if (lc > 0.0) {
            const Vec2 u = (2.0 * diff / lc) * e_cur;
            (*out.grad)[i] += u;
            (*out.grad)[im1] -= u;
        }
    }
    return out;
}

// Change of the discrete second difference D(i) = P[i+1] - 2 P[i] + P[i-1],
// summed as plain Euclidean norms over all cyclic indices. Gradient w.r.t.
// cur.
inline LossValue reg_second_derivative(const PointSet& prev, const PointSet& cur) {
    const std::size_t n = prev.size();
    if (n != cur.size()) throw SizeMismatch("reg_second_derivative: point counts differ");
    if (n < 3) throw SizeMismatch("reg_second_derivative: needs N >= 3");

    LossValue out;
    out.grad.emplace(n, Vec2{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t im1 = (i + n - 1) % n;
        const std::size_t ip1 = (i + 1) % n;
        const Vec2 d_cur = cur.points[ip1] - 2.0 * cur.points[i] + cur.points[im1];
        const Vec2 d_prev = prev.points[ip1] - 2.0 * prev.points[i] + prev.points[im1];
        const Vec2 r = d_cur - d_prev;
        const double ln = norm(r);
        out.value += ln;
        if (ln > 0.0) {
            const Vec2 u = (1.0 / ln) * r;
            (*out.grad)[ip1] += u;
            (*out.grad)[i] -= 2.0 * u;
            (*out.grad)[im1] += u;
        }
    }
    return out;
}

// Mean smooth-L1 disagreement between a forward track and the time-reversed
// backward track, over all K frames and N points. Gradient is w.r.t. the
// forward sets, laid out frame-major (entry k*N + i).
inline LossValue cycle_consistency_loss(const std::vector<PointSet>& forward,
                                        const std::vector<PointSet>& backward) {
    const std::size_t k = forward.size();
    if (k == 0 || k != backward.size())
        throw SizeMismatch("cycle_consistency_loss: frame counts differ or empty");

    std::size_t total = 0;
    for (std::size_t t = 0; t < k; ++t) {
        if (forward[t].size() != backward[t].size() || forward[t].size() == 0)
            throw SizeMismatch("cycle_consistency_loss: point counts differ within a frame");
        total += forward[t].size();
    }

    LossValue out;
    out.grad.emplace(total);
    std::size_t at = 0;
    for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t i = 0; i < forward[t].size(); ++i, ++at) {
            const Vec2 d = forward[t].points[i] - backward[t].points[i];
            out.value += smooth_l1(d);
            (*out.grad)[at] = (1.0 / static_cast<double>(total)) * smooth_l1_grad(d);
        }
    }
    out.value /= static_cast<double>(total);
    return out;
}

}  // namespace polytrack
