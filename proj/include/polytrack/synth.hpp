#pragma once

// Synthetic sequence generation with exact point supervision. One object
// (optionally plus a distractor) is deformed once by moving least squares,
// then animated over the canvas by a cumulative random walk of small
// affines; the background drifts under its own walk. Ground-truth point
// trajectories follow the same transforms by construction, so they are
// exact regardless of rendering.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "polytrack/errors.hpp"
#include "polytrack/geometry.hpp"
#include "polytrack/metrics.hpp"
#include "polytrack/rng.hpp"

namespace polytrack {

struct JitterRanges {
    double rotation_deg = 0.0;
    double scale = 0.0;        // scale factor drawn from 1 +- scale
    double translation = 0.0;  // pixels per axis
};

struct SynthConfig {
    std::uint64_t seed = 0;
    int frames = 8;
    int points = 64;
    int canvas_width = 128;
    int canvas_height = 128;
    int objects = 1;  // 1 or 2 (second is an unlabeled distractor)
    int mls_controls = 6;
    double mls_max_shift = 0.0;  // 0 disables deformation entirely
    JitterRanges object_jitter;
    JitterRanges background_jitter;
};

struct SyntheticSequence {
    std::vector<FrameImage> frames;
    TrackAnnotation gt;  // primary object only
    // transforms[t][obj] maps the object's frame-0 points to frame t.
    std::vector<std::vector<AffineTransform>> transforms;
};

// Affine moving-least-squares deformation of a single query point.
// Weights w_i = 1/|p_i - v|^(2*alpha); exact interpolation at controls.
// Fewer than 3 controls, or controls collinear within tolerance, fall back
// to the weighted-average translation.
inline Vec2 mls_affine_deform(Vec2 v, const std::vector<Vec2>& controls_src,
                              const std::vector<Vec2>& controls_dst, double alpha = 1.0) {
    const std::size_t n = controls_src.size();
    if (n != controls_dst.size())
        throw SizeMismatch("mls_affine_deform: control list lengths differ");
    if (n == 0) throw NoControls("mls_affine_deform: no control points");

    for (std::size_t i = 0; i < n; ++i)
        if (controls_src[i] == v) return controls_dst[i];

    std::vector<double> w(n);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 d = controls_src[i] - v;
        w[i] = 1.0 / std::pow(d.x * d.x + d.y * d.y, alpha);
        wsum += w[i];
    }

    Vec2 pc{0, 0}, qc{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        pc += (w[i] / wsum) * controls_src[i];
        qc += (w[i] / wsum) * controls_dst[i];
    }

    // S = sum w p_hat^T p_hat, B = sum w p_hat^T q_hat (row-vector algebra).
    double s11 = 0, s12 = 0, s22 = 0;
    double b11 = 0, b12 = 0, b21 = 0, b22 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 p = controls_src[i] - pc;
        const Vec2 q = controls_dst[i] - qc;
        s11 += w[i] * p.x * p.x;
        s12 += w[i] * p.x * p.y;
        s22 += w[i] * p.y * p.y;
        b11 += w[i] * p.x * q.x;
        b12 += w[i] * p.x * q.y;
        b21 += w[i] * p.y * q.x;
        b22 += w[i] * p.y * q.y;
    }
    const double det = s11 * s22 - s12 * s12;
    if (n < 3 || std::abs(det) <= 1e-9) return v + (qc - pc);

    // M = S^-1 B; f(v) = (v - p*) M + q*.
    const double m11 = (s22 * b11 - s12 * b21) / det;
    const double m12 = (s22 * b12 - s12 * b22) / det;
    const double m21 = (s11 * b21 - s12 * b11) / det;
    const double m22 = (s11 * b22 - s12 * b12) / det;
    const Vec2 r = v - pc;
    return {r.x * m11 + r.y * m21 + qc.x, r.x * m12 + r.y * m22 + qc.y};
}

// Procedural texture: a few random plane waves per channel around a base
// level. Mid-range wavelengths keep the result smooth under resampling.
inline FrameImage make_texture(int w, int h, int channels, Rng& rng, double base = 0.5,
                               double amplitude = 0.45) {
    FrameImage img(w, h, channels);
    for (int c = 0; c < channels; ++c) {
        constexpr int waves = 4;
        double kx[waves], ky[waves], phase[waves], amp[waves];
        double amp_sum = 0.0;
        for (int k = 0; k < waves; ++k) {
            const double angle = rng.uniform(0.0, 2.0 * 3.141592653589793);
            const double wavelength = rng.uniform(8.0, 40.0);
            const double freq = 2.0 * 3.141592653589793 / wavelength;
            kx[k] = freq * std::cos(angle);
            ky[k] = freq * std::sin(angle);
            phase[k] = rng.uniform(0.0, 2.0 * 3.141592653589793);
            amp[k] = rng.uniform(0.5, 1.0);
            amp_sum += amp[k];
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = 0; k < waves; ++k)
                    s += amp[k] * std::sin(kx[k] * x + ky[k] * y + phase[k]);
                const double v = base + amplitude * (s / amp_sum);
                img.at(x, y, c) = std::clamp(v, 0.0, 1.0);
            }
    }
    return img;
}

// Star-convex blob mask: base circle modulated by low-order harmonics.
inline FrameImage make_blob_mask(int w, int h, Rng& rng, double radius_frac = 0.3,
                                 double irregularity = 0.35) {
    const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
    const double r0 = radius_frac * std::min(w, h);
    constexpr int harmonics = 4;  // orders 2..5
    double ca[harmonics], sa[harmonics];
    for (int k = 0; k < harmonics; ++k) {
        ca[k] = rng.uniform(-1.0, 1.0) / (k + 2);
        sa[k] = rng.uniform(-1.0, 1.0) / (k + 2);
    }
    PointSet poly;
    constexpr int samples = 72;
    for (int s = 0; s < samples; ++s) {
        const double th = 2.0 * 3.141592653589793 * s / samples;
        double f = 1.0;
        for (int k = 0; k < harmonics; ++k)
            f += irregularity * (ca[k] * std::cos((k + 2) * th) + sa[k] * std::sin((k + 2) * th));
        const double r = r0 * std::max(f, 0.25);
        poly.points.push_back({cx + r * std::cos(th), cy + r * std::sin(th)});
    }
    poly.visible.assign(poly.points.size(), 1);
    return rasterize_mask(poly, w, h);
}

namespace detail {

// Distance (chamfer 1 / sqrt(2)) from each foreground pixel to the nearest
// background pixel, mapped to a blend weight ramping over `ramp` pixels.
inline FrameImage feather_alpha(const FrameImage& mask, double ramp = 3.0) {
    const int w = mask.width, h = mask.height;
    const double inf = 1e18, diag = std::sqrt(2.0);
    std::vector<double> dist(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            dist[static_cast<std::size_t>(y) * w + x] = is_foreground(mask.at(x, y)) ? inf : 0.0;

    auto relax = [&](int x, int y, int nx, int ny, double cost) {
        if (nx < 0 || nx >= w || ny < 0 || ny >= h) {
            // outside the raster counts as background
            auto& d = dist[static_cast<std::size_t>(y) * w + x];
            d = std::min(d, cost);
            return;
        }
        auto& d = dist[static_cast<std::size_t>(y) * w + x];
        d = std::min(d, dist[static_cast<std::size_t>(ny) * w + nx] + cost);
    };

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            relax(x, y, x - 1, y, 1.0);
            relax(x, y, x, y - 1, 1.0);
            relax(x, y, x - 1, y - 1, diag);
            relax(x, y, x + 1, y - 1, diag);
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            relax(x, y, x + 1, y, 1.0);
            relax(x, y, x, y + 1, 1.0);
            relax(x, y, x + 1, y + 1, diag);
            relax(x, y, x - 1, y + 1, diag);
        }

    FrameImage alpha(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            alpha.at(x, y) = std::min(dist[static_cast<std::size_t>(y) * w + x] / ramp, 1.0);
    return alpha;
}

// Fills the canvas by sampling src through the inverse of b; uncovered
// regions stay black.
inline void render_background(FrameImage& canvas, const FrameImage& src,
                              const AffineTransform& b) {
    const AffineTransform inv = b.inverse();
    for (int y = 0; y < canvas.height; ++y)
        for (int x = 0; x < canvas.width; ++x) {
            const Vec2 p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!inside_image(p, src.width, src.height)) {
                for (int c = 0; c < canvas.channels; ++c) canvas.at(x, y, c) = 0.0;
                continue;
            }
            for (int c = 0; c < canvas.channels; ++c)
                canvas.at(x, y, c) = bilinear(src, p.x, p.y, c);
        }
}

// Linear blend of an object layer (image + alpha plane in object-local
// coordinates) into the canvas through transform m.
inline void composite_object(FrameImage& canvas, const FrameImage& img,
                             const FrameImage& alpha, const AffineTransform& m) {
    const AffineTransform inv = m.inverse();
    for (int y = 0; y < canvas.height; ++y)
        for (int x = 0; x < canvas.width; ++x) {
            const Vec2 p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!inside_image(p, img.width, img.height)) continue;
            const double a = bilinear(alpha, p.x, p.y, 0);
            if (a <= 0.0) continue;
            for (int c = 0; c < canvas.channels; ++c)
                canvas.at(x, y, c) =
                    a * bilinear(img, p.x, p.y, c) + (1.0 - a) * canvas.at(x, y, c);
        }
}

// Small affine about a pivot: rotate by deg degrees, scale, then translate.
inline AffineTransform jitter_affine(const JitterRanges& j, Vec2 pivot, Rng& rng) {
    const double theta = rng.jitter(j.rotation_deg) * 3.141592653589793 / 180.0;
    const double s = 1.0 + rng.jitter(j.scale);
    const double dx = rng.jitter(j.translation);
    const double dy = rng.jitter(j.translation);
    const double c = std::cos(theta), sn = std::sin(theta);
    AffineTransform a;
    a.a11 = s * c;
    a.a12 = -s * sn;
    a.a21 = s * sn;
    a.a22 = s * c;
    // pivot maps to pivot + (dx, dy)
    a.tx = pivot.x + dx - (a.a11 * pivot.x + a.a12 * pivot.y);
    a.ty = pivot.y + dy - (a.a21 * pivot.x + a.a22 * pivot.y);
    return a;
}

inline AffineTransform translation(double dx, double dy) {
    AffineTransform a;
    a.tx = dx;
    a.ty = dy;
    return a;
}

// One renderable object layer and its motion state.
struct ObjectLayer {
    FrameImage image;
    FrameImage alpha;
    Vec2 center;          // pivot in object-local coordinates
    AffineTransform m;    // object-local -> canvas, current frame
};

}  // namespace detail

// Builds a full synthetic sequence from an object cutout and a background.
// All randomness flows from cfg.seed; the same seed reproduces the same
// bytes. The recorded per-frame transforms map frame-0 ground truth to
// frame t exactly.
inline SyntheticSequence generate_sequence(const SynthConfig& cfg, const FrameImage& object_mask,
                                           const FrameImage& object_image,
                                           const FrameImage& background) {
    if (cfg.frames < 2) throw SchemaError("generate_sequence: frames must be >= 2");
    if (cfg.points < 3) throw SchemaError("generate_sequence: points must be >= 3");
    if (cfg.objects < 1 || cfg.objects > 2)
        throw SchemaError("generate_sequence: objects must be 1 or 2");
    if (cfg.mls_max_shift < 0 || cfg.object_jitter.rotation_deg < 0 ||
        cfg.object_jitter.scale < 0 || cfg.object_jitter.translation < 0 ||
        cfg.background_jitter.rotation_deg < 0 || cfg.background_jitter.scale < 0 ||
        cfg.background_jitter.translation < 0)
        throw SchemaError("generate_sequence: ranges must be nonnegative");
    if (object_mask.width != object_image.width || object_mask.height != object_image.height)
        throw SizeMismatch("generate_sequence: object mask and image sizes differ");
    if (object_mask.channels != 1)
        throw SizeMismatch("generate_sequence: object mask must be single-channel");
    if (object_image.channels != background.channels)
        throw SizeMismatch("generate_sequence: object and background channel counts differ");
    if (background.width < cfg.canvas_width || background.height < cfg.canvas_height)
        throw CanvasTooSmall("generate_sequence: background smaller than canvas");

    Rng rng(cfg.seed);
    const int W = cfg.canvas_width, H = cfg.canvas_height;
    const Vec2 canvas_center{0.5 * (W - 1), 0.5 * (H - 1)};

    // Contour of the object, in object-local pixel coordinates.
    PointSet ps = resample_uniform(extract_contour(object_mask), cfg.points);

    // One fixed deformation per sequence. The point set takes the forward
    // map; the raster takes the backward map (control roles swapped), which
    // matches the forward map exactly at the controls.
    FrameImage def_image = object_image;
    FrameImage def_mask = object_mask;
    if (cfg.mls_max_shift > 0.0) {
        if (cfg.mls_controls < 1)
            throw SchemaError("generate_sequence: mls_controls must be >= 1");
        double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
        for (const Vec2& p : ps.points) {
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
        std::vector<Vec2> src, dst;
        for (int i = 0; i < cfg.mls_controls; ++i) {
            Vec2 c{0.5 * (min_x + max_x), 0.5 * (min_y + max_y)};
            for (int tries = 0; tries < 1000; ++tries) {
                const Vec2 cand{rng.uniform(min_x, max_x), rng.uniform(min_y, max_y)};
                if (detail::point_in_polygon(ps.points, cand.x, cand.y)) {
                    c = cand;
                    break;
                }
            }
            src.push_back(c);
        }
        for (int i = 0; i < cfg.mls_controls; ++i)
            dst.push_back(src[static_cast<std::size_t>(i)] +
                          Vec2{rng.jitter(cfg.mls_max_shift), rng.jitter(cfg.mls_max_shift)});

        for (Vec2& p : ps.points) p = mls_affine_deform(p, src, dst);

        def_image = FrameImage(object_image.width, object_image.height, object_image.channels);
        def_mask = FrameImage(object_mask.width, object_mask.height, 1);
        for (int y = 0; y < def_image.height; ++y)
            for (int x = 0; x < def_image.width; ++x) {
                const Vec2 p = mls_affine_deform({static_cast<double>(x), static_cast<double>(y)},
                                                 dst, src);
                if (!detail::inside_image(p, object_image.width, object_image.height)) continue;
                for (int c = 0; c < def_image.channels; ++c)
                    def_image.at(x, y, c) = detail::bilinear(object_image, p.x, p.y, c);
                def_mask.at(x, y) =
                    detail::bilinear(object_mask, p.x, p.y, 0) > 0.5 ? 1.0 : 0.0;
            }
    }

    std::vector<detail::ObjectLayer> layers;  // drawn in order; primary last

    // Optional distractor, drawn beneath the primary object.
    if (cfg.objects == 2) {
        const int dw = std::max(8, W / 3), dh = std::max(8, H / 3);
        FrameImage dmask = make_blob_mask(dw, dh, rng);
        FrameImage dimg = make_texture(dw, dh, background.channels, rng, 0.55, 0.4);
        detail::ObjectLayer layer;
        layer.alpha = detail::feather_alpha(dmask);
        layer.image = std::move(dimg);
        layer.center = {0.5 * (dw - 1), 0.5 * (dh - 1)};
        const Vec2 pos{rng.uniform(0.2 * W, 0.8 * W), rng.uniform(0.2 * H, 0.8 * H)};
        layer.m = detail::translation(pos.x - layer.center.x, pos.y - layer.center.y);
        layers.push_back(std::move(layer));
    }

    {
        detail::ObjectLayer primary;
        primary.alpha = detail::feather_alpha(def_mask);
        primary.image = def_image;
        double sx = 0, sy = 0;
        for (const Vec2& p : ps.points) {
            sx += p.x;
            sy += p.y;
        }
        primary.center = {sx / static_cast<double>(ps.size()), sy / static_cast<double>(ps.size())};
        primary.m = detail::translation(canvas_center.x - primary.center.x,
                                        canvas_center.y - primary.center.y);
        layers.push_back(std::move(primary));
    }
    const std::size_t primary_idx = layers.size() - 1;

    AffineTransform bg_m = detail::translation(-0.5 * (background.width - W),
                                               -0.5 * (background.height - H));

    SyntheticSequence seq;
    seq.gt.width = W;
    seq.gt.height = H;
    const AffineTransform m0 = layers[primary_idx].m;
    const AffineTransform m0_inv = m0.inverse();
    const PointSet base = apply_affine(ps, m0);  // frame-0 ground truth
    std::vector<AffineTransform> rel_history;    // primary: frame 0 -> frame t

    for (int t = 0; t < cfg.frames; ++t) {
        if (t > 0) {
            for (std::size_t li = 0; li < layers.size(); ++li) {
                const Vec2 pivot = layers[li].m.apply(layers[li].center);
                layers[li].m =
                    compose(detail::jitter_affine(cfg.object_jitter, pivot, rng), layers[li].m);
            }
            const AffineTransform bj =
                detail::jitter_affine(cfg.background_jitter, canvas_center, rng);
            bg_m = compose(bj, bg_m);
        }

        FrameImage canvas(W, H, background.channels);
        detail::render_background(canvas, background, bg_m);
        for (const auto& layer : layers)
            detail::composite_object(canvas, layer.image, layer.alpha, layer.m);
        seq.frames.push_back(std::move(canvas));

        // Ground truth is produced by applying the recorded transform to the
        // frame-0 points, so replaying the transform reproduces it exactly.
        const AffineTransform rel = t == 0 ? AffineTransform::identity()
                                           : compose(layers[primary_idx].m, m0_inv);
        rel_history.push_back(rel);
        std::vector<AffineTransform> per_object;
        for (const auto& layer : layers) per_object.push_back(layer.m);
        seq.transforms.push_back(std::move(per_object));

        PointSet gt = apply_affine(base, rel);
        for (std::size_t i = 0; i < gt.size(); ++i)
            gt.visible[i] = detail::inside_image(gt.points[i], W, H) ? 1 : 0;
        seq.gt.frames.push_back(std::move(gt));
    }

    // Re-express per-object transforms relative to frame 0 so that
    // transforms[t] applied to frame-0 ground truth lands on frame t.
    const std::vector<AffineTransform> first = seq.transforms[0];
    for (std::size_t t = 0; t < seq.transforms.size(); ++t)
        for (std::size_t o = 0; o < seq.transforms[t].size(); ++o)
            seq.transforms[t][o] = o == primary_idx
                                       ? rel_history[t]
                                       : compose(seq.transforms[t][o], first[o].inverse());
    return seq;
}

}  // namespace polytrack
