#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"

namespace polytrack {

// Per-frame point annotations for one tracked object over a sequence.
struct TrackAnnotation {
    int width = 0;
    int height = 0;
    std::vector<PointSet> frames;

    double diagonal() const {
        return std::sqrt(static_cast<double>(width) * width +
                         static_cast<double>(height) * height);
    }
};

struct MetricReport {
    std::vector<std::pair<double, double>> sa;  // (tau, value)
    std::vector<std::pair<double, double>> ta;
    double j = 0.0;
    double f = 0.0;
    double avg_acc = 0.0;
};

namespace detail {

inline void check_annotation_pair(const TrackAnnotation& pred, const TrackAnnotation& gt) {
    if (pred.width != gt.width || pred.height != gt.height ||
        pred.frames.size() != gt.frames.size())
        throw ShapeMismatch("annotations disagree on size or frame count");
    for (std::size_t t = 0; t < gt.frames.size(); ++t)
        if (pred.frames[t].size() != gt.frames[t].size())
            throw ShapeMismatch("annotations disagree on point count");
}

}  // namespace detail

// Fraction of gt-visible points whose prediction error stays under tau * D,
// D the image diagonal. Strict comparison.
inline double spatial_accuracy(const TrackAnnotation& pred, const TrackAnnotation& gt,
                               double tau) {
    detail::check_annotation_pair(pred, gt);
    const double limit = tau * gt.diagonal();
    std::size_t hits = 0, total = 0;
    for (std::size_t t = 0; t < gt.frames.size(); ++t) {
        const PointSet& p = pred.frames[t];
        const PointSet& g = gt.frames[t];
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!g.visible[i]) continue;
            ++total;
            if (norm(p.points[i] - g.points[i]) < limit) ++hits;
        }
    }
    if (total == 0) throw NoVisiblePoints("spatial_accuracy: no visible ground-truth point");
    return static_cast<double>(hits) / static_cast<double>(total);
}

// Like spatial_accuracy but on the frame-to-frame change of the error
// vector; a point counts only when visible at both t and t-1.
inline double temporal_accuracy(const TrackAnnotation& pred, const TrackAnnotation& gt,
                                double tau) {
    detail::check_annotation_pair(pred, gt);
    if (gt.frames.size() < 2)
        throw TooFewFrames("temporal_accuracy: needs at least 2 frames");
    const double limit = tau * gt.diagonal();
    std::size_t hits = 0, total = 0;
    for (std::size_t t = 1; t < gt.frames.size(); ++t) {
        const PointSet& g0 = gt.frames[t - 1];
        const PointSet& g1 = gt.frames[t];
        const PointSet& p0 = pred.frames[t - 1];
        const PointSet& p1 = pred.frames[t];
        for (std::size_t i = 0; i < g1.size(); ++i) {
            if (!g1.visible[i] || !g0.visible[i]) continue;
            ++total;
            const Vec2 e1 = p1.points[i] - g1.points[i];
            const Vec2 e0 = p0.points[i] - g0.points[i];
            if (norm(e1 - e0) < limit) ++hits;
        }
    }
    if (total == 0) throw NoVisiblePoints("temporal_accuracy: no point visible in consecutive frames");
    return static_cast<double>(hits) / static_cast<double>(total);
}

// Intersection over union; 1 when both masks are empty.
inline double region_similarity(const FrameImage& pred_mask, const FrameImage& gt_mask) {
    if (!pred_mask.same_shape(gt_mask))
        throw SizeMismatch("region_similarity: mask shapes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred_mask.data.size(); ++i) {
        const bool a = detail::is_foreground(pred_mask.data[i]);
        const bool b = detail::is_foreground(gt_mask.data[i]);
        inter += a && b;
        uni += a || b;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// Foreground pixels with at least one in-raster 4-neighbor that is
// background. A mask filling the whole raster has no boundary.
inline std::vector<std::pair<int, int>> boundary_pixels(const FrameImage& mask) {
    std::vector<std::pair<int, int>> out;
    const int w = mask.width, h = mask.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!is_foreground(mask.at(x, y))) continue;
            const bool edge =
                (x > 0 && !is_foreground(mask.at(x - 1, y))) ||
                (x + 1 < w && !is_foreground(mask.at(x + 1, y))) ||
                (y > 0 && !is_foreground(mask.at(x, y - 1))) ||
                (y + 1 < h && !is_foreground(mask.at(x, y + 1)));
            if (edge) out.push_back({x, y});
        }
    }
    return out;
}

inline std::size_t matched_within(const std::vector<std::pair<int, int>>& from,
                                  const std::vector<std::pair<int, int>>& to,
                                  double radius) {
    const double r2 = radius * radius;
    std::size_t matched = 0;
    for (auto [ax, ay] : from) {
        for (auto [bx, by] : to) {
            const double dx = ax - bx, dy = ay - by;
            if (dx * dx + dy * dy <= r2) {
                ++matched;
                break;
            }
        }
    }
    return matched;
}

}  // namespace detail

// Boundary F-measure: precision and recall of boundary pixels matched
// within radius ceil(0.008 * D).
inline double boundary_accuracy(const FrameImage& pred_mask, const FrameImage& gt_mask) {
    if (!pred_mask.same_shape(gt_mask))
        throw SizeMismatch("boundary_accuracy: mask shapes differ");
    const double diag = std::sqrt(static_cast<double>(pred_mask.width) * pred_mask.width +
                                  static_cast<double>(pred_mask.height) * pred_mask.height);
    const double radius = std::ceil(0.008 * diag);

    const auto pb = detail::boundary_pixels(pred_mask);
    const auto gb = detail::boundary_pixels(gt_mask);
    if (pb.empty() && gb.empty()) return 1.0;
    if (pb.empty() || gb.empty()) return 0.0;

    const double precision =
        static_cast<double>(detail::matched_within(pb, gb, radius)) / static_cast<double>(pb.size());
    const double recall =
        static_cast<double>(detail::matched_within(gb, pb, radius)) / static_cast<double>(gb.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// Fraction of pixels where the two binary masks agree.
inline double average_accuracy(const FrameImage& pred_mask, const FrameImage& gt_mask) {
    if (!pred_mask.same_shape(gt_mask))
        throw SizeMismatch("average_accuracy: mask shapes differ");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred_mask.data.size(); ++i)
        agree += detail::is_foreground(pred_mask.data[i]) ==
                 detail::is_foreground(gt_mask.data[i]);
    return static_cast<double>(agree) / static_cast<double>(pred_mask.data.size());
}

// Sequence motion statistics on coordinates normalized by (W, H):
// MO = mean per-point displacement between consecutive frames,
// SC = mean absolute change of cyclic edge lengths.
inline std::pair<double, double> sequence_stats(const TrackAnnotation& gt) {
    const std::size_t t_count = gt.frames.size();
    if (t_count < 2) throw TooFewFrames("sequence_stats: needs at least 2 frames");

    auto normalized = [&](const PointSet& ps) {
        std::vector<Vec2> out(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i)
            out[i] = {ps.points[i].x / gt.width, ps.points[i].y / gt.height};
        return out;
    };

    double mo_sum = 0.0, sc_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 1; t < t_count; ++t) {
        const auto a = normalized(gt.frames[t - 1]);
        const auto b = normalized(gt.frames[t]);
        if (a.size() != b.size())
            throw ShapeMismatch("sequence_stats: point count changes between frames");
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) {
            mo_sum += norm(b[i] - a[i]);
            const std::size_t im1 = (i + n - 1) % n;
            sc_sum += std::abs(norm(b[i] - b[im1]) - norm(a[i] - a[im1]));
            ++count;
        }
    }
    return {mo_sum / static_cast<double>(count), sc_sum / static_cast<double>(count)};
}

}  // namespace polytrack
