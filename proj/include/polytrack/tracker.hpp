#pragma once

// End-to-end propagation: per frame, crop around the current estimate,
// recover a global affine by direct multi-resolution optimization, warp
// points and the previous frame, build a feature pyramid, then run
// coarse-to-fine local refinement with one of two backends (energy descent
// on an edge/shape objective, or the learned local alignment network).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"
#include "polytrack/lam.hpp"
#include "polytrack/losses.hpp"
#include "polytrack/metrics.hpp"

namespace polytrack {

enum class Backend { energy, lam };

struct TrackerConfig {
    int n_points = 128;
    int local_iters = 5;
    std::vector<int> pyramid_strides{32, 16, 8, 4, 4};
    Backend backend = Backend::energy;
    int global_levels = 3;
    int global_steps = 100;
    double w_edge = 1.0;
    double w_r1 = 0.05;
    double w_r2 = 0.05;
    double crop_scale = 2.0;
    std::optional<LamParams> lam;
};

// Mutable per-track state threaded through local refinement.
struct TrackState {
    PointSet prev_points;  // regularizer anchor: the warped previous estimate
    LamState lam;
    bool lam_ready = false;
};

struct FrameDiagnostics {
    AffineTransform global;                 // full-frame coordinates
    std::vector<double> mean_offset;        // per refinement iteration, pixels
};

namespace detail {

inline void validate_config(const TrackerConfig& cfg) {
    if (cfg.n_points < 3) throw ShapeMismatch("tracker config: n_points must be >= 3");
    if (cfg.local_iters != static_cast<int>(cfg.pyramid_strides.size()))
        throw ShapeMismatch("tracker config: local_iters != pyramid_strides length");
    if (cfg.w_edge < 0 || cfg.w_r1 < 0 || cfg.w_r2 < 0)
        throw ShapeMismatch("tracker config: energy weights must be nonnegative");
    if (cfg.backend == Backend::lam && !cfg.lam)
        throw ShapeMismatch("tracker config: lam backend requires parameters");
}

// Block-average downscale by an integer stride; output dims ceil(in/s).
inline FrameImage avg_pool(const FrameImage& img, int s) {
    const int ow = (img.width + s - 1) / s;
    const int oh = (img.height + s - 1) / s;
    FrameImage out(ow, oh, img.channels);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const int x0 = ox * s, x1 = std::min(x0 + s, img.width);
            const int y0 = oy * s, y1 = std::min(y0 + s, img.height);
            const double inv = 1.0 / ((x1 - x0) * (y1 - y0));
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) acc += img.at(x, y, c);
                out.at(ox, oy, c) = acc * inv;
            }
        }
    return out;
}

// Max-pool variant; keeps thin masks alive across downscaling.
inline FrameImage max_pool(const FrameImage& img, int s) {
    const int ow = (img.width + s - 1) / s;
    const int oh = (img.height + s - 1) / s;
    FrameImage out(ow, oh, img.channels);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const int x0 = ox * s, x1 = std::min(x0 + s, img.width);
            const int y0 = oy * s, y1 = std::min(y0 + s, img.height);
            for (int c = 0; c < img.channels; ++c) {
                double m = -std::numeric_limits<double>::infinity();
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) m = std::max(m, img.at(x, y, c));
                out.at(ox, oy, c) = m;
            }
        }
    return out;
}

// Gradient magnitude of the channel-mean image; central differences inside,
// one-sided at the borders.
inline FrameImage gradient_magnitude(const FrameImage& img) {
    const int w = img.width, h = img.height;
    FrameImage gray(w, h, 1);
    const double inv_c = 1.0 / img.channels;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < img.channels; ++c) acc += img.at(x, y, c);
            gray.at(x, y) = acc * inv_c;
        }
    FrameImage out(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
            const double gx = (gray.at(xr, y) - gray.at(xl, y)) / (xr - xl > 0 ? xr - xl : 1);
            const double gy = (gray.at(x, yd) - gray.at(x, yu)) / (yd - yu > 0 ? yd - yu : 1);
            out.at(x, y) = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

// The images global alignment optimizes over at one resolution.
struct AlignLevel {
    FrameImage cur, prv, mask;
};

// Masked photometric objective for a candidate sampling map b (output pixel
// -> source pixel in prv): mean over {x : mask(b(x)) > 0.5, b(x) in bounds}
// of the channel-norm difference. +inf when nothing is covered.
inline double align_objective(const AlignLevel& lv, const AffineTransform& b) {
    double sum = 0.0;
    std::size_t k = 0;
    for (int y = 0; y < lv.cur.height; ++y)
        for (int x = 0; x < lv.cur.width; ++x) {
            const Vec2 s = b.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!inside_image(s, lv.prv.width, lv.prv.height)) continue;
            if (bilinear(lv.mask, s.x, s.y, 0) <= 0.5) continue;
            double sq = 0.0;
            for (int c = 0; c < lv.cur.channels; ++c) {
                const double d = bilinear(lv.prv, s.x, s.y, c) - lv.cur.at(x, y, c);
                sq += d * d;
            }
            sum += std::sqrt(sq);
            ++k;
        }
    if (k == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(k);
}

// Gradient of align_objective w.r.t. the six parameters of b expressed in
// centered-normalized coordinates (see norm_from_pixel), holding the masked
// pixel set fixed. Layout: [a11, a12, a21, a22, tx, ty].
inline void align_gradient(const AlignLevel& lv, const AffineTransform& b, Vec2 center,
                           double radius, double g[6]) {
    std::fill(g, g + 6, 0.0);
    std::size_t k = 0;
    for (int y = 0; y < lv.cur.height; ++y)
        for (int x = 0; x < lv.cur.width; ++x) {
            const Vec2 s = b.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!inside_image(s, lv.prv.width, lv.prv.height)) continue;
            if (bilinear(lv.mask, s.x, s.y, 0) <= 0.5) continue;
            ++k;
            double rho_sq = 0.0;
            double gx = 0.0, gy = 0.0;
            for (int c = 0; c < lv.cur.channels; ++c) {
                double dx, dy;
                const double v = bilinear_with_grad(lv.prv, s.x, s.y, c, dx, dy);
                const double r = v - lv.cur.at(x, y, c);
                rho_sq += r * r;
                gx += r * dx;
                gy += r * dy;
            }
            const double rho = std::sqrt(rho_sq);
            if (rho <= 0.0) continue;
            gx /= rho;
            gy /= rho;
            // s = center + radius * (A_n x_n + t_n) with x_n the normalized pixel
            const double xn = (x - center.x) / radius;
            const double yn = (y - center.y) / radius;
            g[0] += gx * radius * xn;
            g[1] += gx * radius * yn;
            g[2] += gy * radius * xn;
            g[3] += gy * radius * yn;
            g[4] += gx * radius;
            g[5] += gy * radius;
        }
    if (k > 0)
        for (int i = 0; i < 6; ++i) g[i] /= static_cast<double>(k);
}

// Conjugation helpers between pixel coordinates and centered-normalized
// coordinates x_n = (x - center)/radius of one level.
inline AffineTransform norm_from_pixel(const AffineTransform& a_pixel, Vec2 center,
                                       double radius) {
    AffineTransform to_pix;  // x_n -> x
    to_pix.a11 = radius;
    to_pix.a22 = radius;
    to_pix.tx = center.x;
    to_pix.ty = center.y;
    return compose(to_pix.inverse(), compose(a_pixel, to_pix));
}

inline AffineTransform pixel_from_norm(const AffineTransform& a_norm, Vec2 center,
                                       double radius) {
    AffineTransform to_pix;
    to_pix.a11 = radius;
    to_pix.a22 = radius;
    to_pix.tx = center.x;
    to_pix.ty = center.y;
    return compose(to_pix, compose(a_norm, to_pix.inverse()));
}

// Pixel coordinates of pooled level k map to level k+1... the 2x block
// center convention: coarse pixel u sits at fine coordinate 2u + 0.5.
inline AffineTransform up2() {
    AffineTransform s;
    s.a11 = 2.0;
    s.a22 = 2.0;
    s.tx = 0.5;
    s.ty = 0.5;
    return s;
}

}  // namespace detail

// Photometric objective used by estimate_global_affine, exposed so callers
// can verify the never-worse-than-identity guarantee: inputs are downscaled
// by 2 (mask by max-pooling), a is the forward prev->cur transform in
// full-resolution coordinates.
inline double global_alignment_objective(const FrameImage& cur, const FrameImage& prev,
                                         const FrameImage& prev_mask,
                                         const AffineTransform& a) {
    if (!cur.same_shape(prev)) throw SizeMismatch("global alignment: image shapes differ");
    if (prev_mask.width != cur.width || prev_mask.height != cur.height ||
        prev_mask.channels != 1)
        throw SizeMismatch("global alignment: mask shape mismatch");
    detail::AlignLevel lv{detail::avg_pool(cur, 2), detail::avg_pool(prev, 2),
                          detail::max_pool(prev_mask, 2)};
    const AffineTransform s = detail::up2();
    const AffineTransform a_half = compose(s.inverse(), compose(a, s));
    return detail::align_objective(lv, a_half.inverse());
}

// Direct multi-resolution recovery of the previous->current affine motion:
// gradient descent with backtracking on the masked photometric objective,
// coarse to fine, identity-initialized. The result is never worse than
// identity under global_alignment_objective.
inline AffineTransform estimate_global_affine(const FrameImage& cur, const FrameImage& prev,
                                              const FrameImage& prev_mask,
                                              const TrackerConfig& cfg) {
    if (!cur.same_shape(prev)) throw SizeMismatch("estimate_global_affine: image shapes differ");
    if (prev_mask.width != cur.width || prev_mask.height != cur.height ||
        prev_mask.channels != 1)
        throw SizeMismatch("estimate_global_affine: mask shape mismatch");
    bool any = false;
    for (double v : prev_mask.data)
        if (detail::is_foreground(v)) {
            any = true;
            break;
        }
    if (!any) throw EmptyMask("estimate_global_affine: mask has no foreground");

    // Level 0 is the half-resolution pair; deeper levels halve again.
    std::vector<detail::AlignLevel> levels;
    levels.push_back({detail::avg_pool(cur, 2), detail::avg_pool(prev, 2),
                      detail::max_pool(prev_mask, 2)});
    for (int l = 1; l < cfg.global_levels; ++l) {
        const detail::AlignLevel& p = levels.back();
        if (p.cur.width < 8 || p.cur.height < 8) break;
        levels.push_back({detail::avg_pool(p.cur, 2), detail::avg_pool(p.prv, 2),
                          detail::max_pool(p.mask, 2)});
    }

    // b: sampling map (current -> previous), in the pixel coordinates of the
    // level being optimized. Start at the coarsest with identity.
    AffineTransform b = AffineTransform::identity();
    const AffineTransform s2 = detail::up2();
    for (int l = static_cast<int>(levels.size()) - 1; l >= 0; --l) {
        const detail::AlignLevel& lv = levels[static_cast<std::size_t>(l)];
        const Vec2 center{0.5 * (lv.cur.width - 1), 0.5 * (lv.cur.height - 1)};
        const double radius = 0.5 * std::max(lv.cur.width, lv.cur.height);

        AffineTransform bn = detail::norm_from_pixel(b, center, radius);
        double fb = detail::align_objective(lv, b);
        double lr = 0.05;
        for (int step = 0; step < cfg.global_steps; ++step) {
            if (!std::isfinite(fb)) break;
            double g[6];
            detail::align_gradient(lv, detail::pixel_from_norm(bn, center, radius), center,
                                   radius, g);
            double gnorm = 0.0;
            for (double v : g) gnorm += v * v;
            if (gnorm <= 1e-24) break;

            bool accepted = false;
            while (lr > 1e-12) {
                AffineTransform cand = bn;
                cand.a11 -= lr * g[0];
                cand.a12 -= lr * g[1];
                cand.a21 -= lr * g[2];
                cand.a22 -= lr * g[3];
                cand.tx -= lr * g[4];
                cand.ty -= lr * g[5];
                const double fc = detail::align_objective(
                    lv, detail::pixel_from_norm(cand, center, radius));
                if (fc < fb) {
                    bn = cand;
                    fb = fc;
                    lr = std::min(lr * 1.3, 1.0);
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            if (!accepted) break;
        }
        b = detail::pixel_from_norm(bn, center, radius);
        if (l > 0) b = compose(s2, compose(b, s2.inverse()));  // to the finer level
    }

    // Guard: keep the optimum only if it beats identity at the comparison
    // resolution (level 0, the half-resolution pair).
    const double f_opt = detail::align_objective(levels[0], b);
    const double f_id = detail::align_objective(levels[0], AffineTransform::identity());
    if (!(f_opt < f_id)) return AffineTransform::identity();

    // Convert the half-resolution sampling map to the full-resolution
    // forward transform.
    const AffineTransform b_full = compose(s2, compose(b, s2.inverse()));
    return b_full.inverse();
}

// Stacks [cur | warped_prev | mask | gradient magnitude of cur] and
// average-pools the stack once per configured stride.
inline FeaturePyramid build_pyramid(const FrameImage& cur, const FrameImage& warped_prev,
                                    const FrameImage& warped_mask, const TrackerConfig& cfg) {
    if (!cur.same_shape(warped_prev))
        throw SizeMismatch("build_pyramid: image shapes differ");
    if (warped_mask.width != cur.width || warped_mask.height != cur.height ||
        warped_mask.channels != 1)
        throw SizeMismatch("build_pyramid: mask shape mismatch");

    const int w = cur.width, h = cur.height;
    const FrameImage grad = detail::gradient_magnitude(cur);
    FrameImage base(w, h, cur.channels + warped_prev.channels + 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int c = 0;
            for (int i = 0; i < cur.channels; ++i) base.at(x, y, c++) = cur.at(x, y, i);
            for (int i = 0; i < warped_prev.channels; ++i)
                base.at(x, y, c++) = warped_prev.at(x, y, i);
            base.at(x, y, c++) = warped_mask.at(x, y);
            base.at(x, y, c) = grad.at(x, y);
        }

    FeaturePyramid pyr;
    pyr.input_width = w;
    pyr.input_height = h;
    std::vector<std::pair<int, FrameImage>> cache;
    for (int s : cfg.pyramid_strides) {
        const FrameImage* found = nullptr;
        for (const auto& [cs, plane] : cache)
            if (cs == s) {
                found = &plane;
                break;
            }
        if (!found) {
            cache.emplace_back(s, detail::avg_pool(base, s));
            found = &cache.back().second;
        }
        pyr.levels.push_back({s, *found});
    }
    return pyr;
}

// One coarse-to-fine refinement sweep. The energy backend walks each point
// down the gradient of
//   E = w_edge * sum_i (1 - edge(p_i)/edge_max) + w_r1 R1 + w_r2 R2
// with a stride-scaled step; the lam backend adds the network's predicted
// offsets. Points are clamped to the image after every iteration.
inline PointSet local_refine(const PointSet& ps, const FeaturePyramid& pyr, TrackState& state,
                             const TrackerConfig& cfg,
                             std::vector<double>* mean_offsets = nullptr) {
    detail::validate_config(cfg);
    if (static_cast<int>(ps.size()) != cfg.n_points)
        throw ShapeMismatch("local_refine: point count != n_points");
    if (static_cast<int>(pyr.levels.size()) != cfg.local_iters)
        throw ShapeMismatch("local_refine: pyramid level count != local_iters");

    const PointSet& anchor = state.prev_points.size() == ps.size() ? state.prev_points : ps;
    const double max_x = static_cast<double>(pyr.input_width - 1);
    const double max_y = static_cast<double>(pyr.input_height - 1);

    PointSet out = ps;
    const int n = static_cast<int>(ps.size());

    if (cfg.backend == Backend::lam) {
        if (!state.lam_ready) {
            state.lam = LamState::zeros(n, cfg.lam->c_hidden);
            state.lam_ready = true;
        }
        for (const PyramidLevel& level : pyr.levels) {
            const Mat feats = sample_point_features(level, out);
            LamOutput fo = lam_forward(feats, out, state.lam, *cfg.lam);
            state.lam = std::move(fo.state);
            double mean = 0.0;
            for (int i = 0; i < n; ++i) {
                out.points[static_cast<std::size_t>(i)].x += fo.offsets.at(i, 0);
                out.points[static_cast<std::size_t>(i)].y += fo.offsets.at(i, 1);
                mean += std::hypot(fo.offsets.at(i, 0), fo.offsets.at(i, 1));
                out.points[static_cast<std::size_t>(i)].x =
                    std::clamp(out.points[static_cast<std::size_t>(i)].x, 0.0, max_x);
                out.points[static_cast<std::size_t>(i)].y =
                    std::clamp(out.points[static_cast<std::size_t>(i)].y, 0.0, max_y);
            }
            if (mean_offsets) mean_offsets->push_back(mean / n);
        }
        return out;
    }

    for (const PyramidLevel& level : pyr.levels) {
        const int edge_c = level.plane.channels - 1;
        double edge_max = 0.0;
        for (int y = 0; y < level.plane.height; ++y)
            for (int x = 0; x < level.plane.width; ++x)
                edge_max = std::max(edge_max, level.plane.at(x, y, edge_c));

        const LossValue r1 = cfg.w_r1 > 0 ? reg_first_derivative(anchor, out) : LossValue{};
        const LossValue r2 = cfg.w_r2 > 0 ? reg_second_derivative(anchor, out) : LossValue{};

        const double step = 0.5 * level.stride;
        double mean = 0.0;
        PointSet next = out;
        for (int i = 0; i < n; ++i) {
            Vec2 g{0.0, 0.0};
            if (cfg.w_edge > 0 && edge_max > 0) {
                double dx, dy;
                detail::bilinear_with_grad(level.plane,
                                           out.points[static_cast<std::size_t>(i)].x / level.stride,
                                           out.points[static_cast<std::size_t>(i)].y / level.stride,
                                           edge_c, dx, dy);
                // d/dp of (1 - edge(p)/edge_max); sampling at p/stride
                g.x -= cfg.w_edge * dx / (edge_max * level.stride);
                g.y -= cfg.w_edge * dy / (edge_max * level.stride);
            }
            if (cfg.w_r1 > 0 && r1.grad) g += cfg.w_r1 * (*r1.grad)[static_cast<std::size_t>(i)];
            if (cfg.w_r2 > 0 && r2.grad) g += cfg.w_r2 * (*r2.grad)[static_cast<std::size_t>(i)];

            Vec2 d = -step * g;
            const double dn = norm(d);
            if (dn > step) d = (step / dn) * d;
            Vec2 p = out.points[static_cast<std::size_t>(i)] + d;
            p.x = std::clamp(p.x, 0.0, max_x);
            p.y = std::clamp(p.y, 0.0, max_y);
            mean += norm(p - out.points[static_cast<std::size_t>(i)]);
            next.points[static_cast<std::size_t>(i)] = p;
        }
        out = std::move(next);
        if (mean_offsets) mean_offsets->push_back(mean / n);
    }
    return out;
}

namespace detail {

// Integer-offset crop; regions outside the source are zero.
inline FrameImage crop_region(const FrameImage& img, int ox, int oy, int cw, int chh) {
    FrameImage out(cw, chh, img.channels);
    for (int y = 0; y < chh; ++y) {
        const int sy = y + oy;
        if (sy < 0 || sy >= img.height) continue;
        for (int x = 0; x < cw; ++x) {
            const int sx = x + ox;
            if (sx < 0 || sx >= img.width) continue;
            for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

}  // namespace detail

// Propagates init through the frame list. Frame 0 of the result is the
// (resampled) init; later frames run crop -> global affine -> warp ->
// pyramid -> local refinement. Deterministic for fixed inputs and config.
inline TrackAnnotation track_sequence(const std::vector<FrameImage>& frames,
                                      const PointSet& init, const TrackerConfig& cfg,
                                      std::vector<FrameDiagnostics>* diagnostics = nullptr) {
    detail::validate_config(cfg);
    if (frames.empty()) throw EmptyFrames("track_sequence: no frames");
    if (init.size() < 3) throw BadInit("track_sequence: init needs >= 3 points");
    for (const FrameImage& f : frames)
        if (!f.same_shape(frames[0])) throw SizeMismatch("track_sequence: frame shapes differ");

    PointSet ps = static_cast<int>(init.size()) == cfg.n_points
                      ? init
                      : resample_uniform(init, cfg.n_points);
    ps.visible.assign(ps.size(), 1);

    TrackAnnotation out;
    out.width = frames[0].width;
    out.height = frames[0].height;
    out.frames.push_back(ps);
    if (diagnostics) diagnostics->clear();

    TrackState state;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const CropWindow win = crop_window(ps, cfg.crop_scale);
        const int side = std::max(16, static_cast<int>(std::ceil(win.side)));
        const int ox = static_cast<int>(std::lround(win.center.x - 0.5 * side));
        const int oy = static_cast<int>(std::lround(win.center.y - 0.5 * side));

        const FrameImage prev_crop = detail::crop_region(frames[t - 1], ox, oy, side, side);
        const FrameImage cur_crop = detail::crop_region(frames[t], ox, oy, side, side);

        PointSet ps_crop = ps;
        for (Vec2& p : ps_crop.points) p -= Vec2{static_cast<double>(ox), static_cast<double>(oy)};

        const FrameImage prev_mask = rasterize_mask(ps_crop, side, side);
        AffineTransform a = AffineTransform::identity();
        bool mask_empty = true;
        for (double v : prev_mask.data)
            if (detail::is_foreground(v)) {
                mask_empty = false;
                break;
            }
        if (!mask_empty) a = estimate_global_affine(cur_crop, prev_crop, prev_mask, cfg);

        PointSet warped = apply_affine(ps_crop, a);
        for (Vec2& p : warped.points) {
            p.x = std::clamp(p.x, 0.0, static_cast<double>(side - 1));
            p.y = std::clamp(p.y, 0.0, static_cast<double>(side - 1));
        }
        const FrameImage warped_prev = warp_image(prev_crop, a);
        const FrameImage warped_mask = rasterize_mask(warped, side, side);
        const FeaturePyramid pyr = build_pyramid(cur_crop, warped_prev, warped_mask, cfg);

        state.prev_points = warped;
        std::vector<double> offsets;
        PointSet refined = local_refine(warped, pyr, state, cfg,
                                        diagnostics ? &offsets : nullptr);

        for (Vec2& p : refined.points) {
            p += Vec2{static_cast<double>(ox), static_cast<double>(oy)};
            p.x = std::clamp(p.x, 0.0, static_cast<double>(out.width - 1));
            p.y = std::clamp(p.y, 0.0, static_cast<double>(out.height - 1));
        }
        refined.visible.assign(refined.size(), 1);
        ps = std::move(refined);
        out.frames.push_back(ps);

        if (diagnostics) {
            // Express the crop-space transform in full-frame coordinates.
            AffineTransform shift;
            shift.tx = ox;
            shift.ty = oy;
            FrameDiagnostics d;
            d.global = compose(shift, compose(a, shift.inverse()));
            d.mean_offset = std::move(offsets);
            diagnostics->push_back(std::move(d));
        }
    }
    return out;
}

// Tracks forward over frames[0..k], then back over the reversed list from
// the forward result. Both annotations are returned in frame order, so
// entry t of each refers to frame t and cycle_consistency_loss can pair
// them directly.
inline std::pair<TrackAnnotation, TrackAnnotation> run_cycle(
    const std::vector<FrameImage>& frames, const PointSet& init, int k,
    const TrackerConfig& cfg) {
    if (k < 0 || frames.size() < static_cast<std::size_t>(k) + 1)
        throw TooFewFrames("run_cycle: needs k+1 frames");

    const std::vector<FrameImage> fwd_frames(frames.begin(), frames.begin() + k + 1);
    TrackAnnotation forward = track_sequence(fwd_frames, init, cfg);

    std::vector<FrameImage> rev_frames(fwd_frames.rbegin(), fwd_frames.rend());
    TrackAnnotation bwd = track_sequence(rev_frames, forward.frames.back(), cfg);

    TrackAnnotation backward;
    backward.width = bwd.width;
    backward.height = bwd.height;
    backward.frames.assign(bwd.frames.rbegin(), bwd.frames.rend());
    return {std::move(forward), std::move(backward)};
}

}  // namespace polytrack
