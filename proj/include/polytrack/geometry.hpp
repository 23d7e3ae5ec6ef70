#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "polytrack/errors.hpp"

namespace polytrack {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline Vec2& operator+=(Vec2& a, Vec2 b) { a = a + b; return a; }
inline Vec2& operator-=(Vec2& a, Vec2 b) { a = a - b; return a; }
inline bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

// Ordered cyclic set of 2-D points; index i is taken modulo N everywhere.
struct PointSet {
    std::vector<Vec2> points;
    std::vector<std::uint8_t> visible;  // parallel to points; nonzero = visible

    PointSet() = default;
    explicit PointSet(std::vector<Vec2> pts)
        : points(std::move(pts)), visible(points.size(), 1) {}

    std::size_t size() const { return points.size(); }

    // Cyclic access.
    const Vec2& cyc(std::ptrdiff_t i) const {
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(points.size());
        return points[static_cast<std::size_t>(((i % n) + n) % n)];
    }
};

// Row-major raster, samples in [0,1]. Index: (y * width + x) * channels + c.
struct FrameImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    FrameImage() = default;
    FrameImage(int w, int h, int c)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, 0.0) {}

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const FrameImage& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

// (x,y) -> (a11*x + a12*y + tx, a21*x + a22*y + ty)
struct AffineTransform {
    double a11 = 1.0, a12 = 0.0;
    double a21 = 0.0, a22 = 1.0;
    double tx = 0.0, ty = 0.0;

    static AffineTransform identity() { return {}; }

    Vec2 apply(Vec2 p) const {
        return {a11 * p.x + a12 * p.y + tx, a21 * p.x + a22 * p.y + ty};
    }

    double det() const { return a11 * a22 - a12 * a21; }

    AffineTransform inverse() const {
        const double d = det();
        if (std::abs(d) <= 1e-12) throw SingularTransform("affine determinant is 0 within 1e-12");
        AffineTransform inv;
        inv.a11 = a22 / d;
        inv.a12 = -a12 / d;
        inv.a21 = -a21 / d;
        inv.a22 = a11 / d;
        inv.tx = -(inv.a11 * tx + inv.a12 * ty);
        inv.ty = -(inv.a21 * tx + inv.a22 * ty);
        return inv;
    }
};

// outer(inner(p))
inline AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
    AffineTransform r;
    r.a11 = outer.a11 * inner.a11 + outer.a12 * inner.a21;
    r.a12 = outer.a11 * inner.a12 + outer.a12 * inner.a22;
    r.a21 = outer.a21 * inner.a11 + outer.a22 * inner.a21;
    r.a22 = outer.a21 * inner.a12 + outer.a22 * inner.a22;
    const Vec2 t = outer.apply({inner.tx, inner.ty});
    r.tx = t.x;
    r.ty = t.y;
    return r;
}

struct CropWindow {
    Vec2 center;
    double side = 0.0;
};

namespace detail {

inline bool is_foreground(double v) { return v > 0.5; }

// Bilinear sample at (x, y) in the pixel-center grid (pixel (i,j) sits at
// integer coordinates (j, i)). Callers must keep (x, y) inside
// [0, W-1] x [0, H-1]; coordinates are clamped to that box here.
inline double bilinear(const FrameImage& img, double x, double y, int c) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    x0 = std::min(x0, img.width - 2 >= 0 ? img.width - 2 : 0);
    y0 = std::min(y0, img.height - 2 >= 0 ? img.height - 2 : 0);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = img.at(x0, y0, c), v10 = img.at(x1, y0, c);
    const double v01 = img.at(x0, y1, c), v11 = img.at(x1, y1, c);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) +
           fy * ((1.0 - fx) * v01 + fx * v11);
}

// Same sample plus the interpolant's own spatial derivative (piecewise
// bilinear, so the derivative is exact within the cell).
inline double bilinear_with_grad(const FrameImage& img, double x, double y, int c,
                                 double& dx, double& dy) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    x0 = std::min(x0, img.width - 2 >= 0 ? img.width - 2 : 0);
    y0 = std::min(y0, img.height - 2 >= 0 ? img.height - 2 : 0);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = img.at(x0, y0, c), v10 = img.at(x1, y0, c);
    const double v01 = img.at(x0, y1, c), v11 = img.at(x1, y1, c);
    dx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    dy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) +
           fy * ((1.0 - fx) * v01 + fx * v11);
}

inline bool inside_image(Vec2 p, int w, int h) {
    return p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0;
}

// Even-odd crossing test against pixel-center (x, y). The half-open edge
// rule keeps on-edge centers deterministic.
inline bool point_in_polygon(const std::vector<Vec2>& poly, double x, double y) {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& p = poly[j];
        const Vec2& q = poly[i];
        if ((p.y <= y) != (q.y <= y)) {
            const double xint = p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y);
            if (x < xint) inside = !inside;
        }
    }
    return inside;
}

}  // namespace detail

// Outer border of the largest 8-connected foreground component, traced with
// Moore neighbors. The chain comes out counter-clockwise in mathematical
// convention (clockwise on screen with y down); start pixel is the
// component's topmost-leftmost.
inline PointSet extract_contour(const FrameImage& mask) {
    if (mask.channels != 1)
        throw SizeMismatch("extract_contour: mask must be single-channel");
    const int w = mask.width, h = mask.height;

    auto fg = [&](int x, int y) -> bool {
        if (x < 0 || x >= w || y < 0 || y >= h) return false;
        return detail::is_foreground(mask.at(x, y));
    };

    // Largest component by flood fill; ties broken by earliest scan pixel.
    std::vector<std::int32_t> label(static_cast<std::size_t>(w) * h, -1);
    std::int32_t next_label = 0;
    std::size_t best_size = 0;
    int best_sx = -1, best_sy = -1;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!fg(x, y) || label[static_cast<std::size_t>(y) * w + x] >= 0) continue;
            std::size_t count = 0;
            int min_y = y, min_x = x;
            stack.assign(1, {x, y});
            label[static_cast<std::size_t>(y) * w + x] = next_label;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                ++count;
                if (cy < min_y || (cy == min_y && cx < min_x)) {
                    min_y = cy;
                    min_x = cx;
                }
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if ((dx | dy) == 0 || !fg(nx, ny)) continue;
                        auto& l = label[static_cast<std::size_t>(ny) * w + nx];
                        if (l < 0) {
                            l = next_label;
                            stack.push_back({nx, ny});
                        }
                    }
                }
            }
            if (count > best_size) {
                best_size = count;
                best_sx = min_x;
                best_sy = min_y;
            }
            ++next_label;
        }
    }
    if (best_size == 0) throw EmptyMask("extract_contour: no foreground pixel");

    // Moore tracing. Directions clockwise on screen: E SE S SW W NW N NE.
    static constexpr int dx8[8] = {+1, +1, 0, -1, -1, -1, 0, +1};
    static constexpr int dy8[8] = {0, +1, +1, +1, 0, -1, -1, -1};

    const int sx = best_sx, sy = best_sy;
    std::vector<std::pair<int, int>> chain{{sx, sy}};

    // First move: sweep clockwise from one past the western backtrack pixel
    // (west of the topmost-leftmost pixel is always background).
    int d0 = -1;
    for (int j = 0; j < 8; ++j) {
        const int cand = (5 + j) % 8;
        if (fg(sx + dx8[cand], sy + dy8[cand])) {
            d0 = cand;
            break;
        }
    }
    if (d0 >= 0) {
        int d = d0;
        int cx = sx, cy = sy;
        const std::size_t guard = 4 * static_cast<std::size_t>(w) * h + 8;
        for (std::size_t it = 0; it < guard; ++it) {
            cx += dx8[d];
            cy += dy8[d];
            int nd = -1;
            for (int j = 0; j < 8; ++j) {
                const int cand = (d + 6 + j) % 8;
                if (fg(cx + dx8[cand], cy + dy8[cand])) {
                    nd = cand;
                    break;
                }
            }
            if (cx == sx && cy == sy && nd == d0) break;  // boundary closed
            chain.push_back({cx, cy});
            d = nd;
        }
    }

    std::size_t distinct = 0;
    {
        auto sorted = chain;
        std::sort(sorted.begin(), sorted.end());
        distinct = static_cast<std::size_t>(
            std::unique(sorted.begin(), sorted.end()) - sorted.begin());
    }
    if (distinct < 3)
        throw DegenerateComponent("extract_contour: largest component has < 3 border pixels");

    PointSet out;
    out.points.reserve(chain.size());
    for (auto [x, y] : chain) out.points.push_back({static_cast<double>(x), static_cast<double>(y)});
    out.visible.assign(out.points.size(), 1);

    // Enforce orientation: positive shoelace area = CCW in math convention.
    double area2 = 0.0;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
        const Vec2& p = out.points[i];
        const Vec2& q = out.points[(i + 1) % out.points.size()];
        area2 += p.x * q.y - q.x * p.y;
    }
    if (area2 < 0.0) std::reverse(out.points.begin() + 1, out.points.end());
    return out;
}

// n points at equal arc length along the closed polyline. Sample 0 lands on
// the input vertex with lexicographically minimal (y, x); traversal keeps
// the input orientation.
inline PointSet resample_uniform(const PointSet& contour, int n) {
    const std::size_t N = contour.size();
    if (N < 3) throw TooFewPoints("resample_uniform: contour needs >= 3 points");
    if (n < 1) throw TooFewPoints("resample_uniform: n must be >= 1");

    std::size_t start = 0;
    for (std::size_t i = 1; i < N; ++i) {
        const Vec2& a = contour.points[i];
        const Vec2& b = contour.points[start];
        if (a.y < b.y || (a.y == b.y && a.x < b.x)) start = i;
    }

    std::vector<Vec2> verts(N);
    for (std::size_t i = 0; i < N; ++i) verts[i] = contour.points[(start + i) % N];

    std::vector<double> cum(N + 1, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        cum[i + 1] = cum[i] + norm(verts[(i + 1) % N] - verts[i]);
    const double perimeter = cum[N];
    if (!(perimeter > 0.0)) throw DegenerateContour("resample_uniform: zero perimeter");

    PointSet out;
    out.points.resize(static_cast<std::size_t>(n));
    out.visible.assign(static_cast<std::size_t>(n), 1);
    const double step = perimeter / n;
    std::size_t seg = 0;
    for (int j = 0; j < n; ++j) {
        const double t = step * j;
        while (seg + 1 < N && cum[seg + 1] <= t) ++seg;
        const double elen = cum[seg + 1] - cum[seg];
        const double u = elen > 0.0 ? std::clamp((t - cum[seg]) / elen, 0.0, 1.0) : 0.0;
        const Vec2 a = verts[seg];
        const Vec2 b = verts[(seg + 1) % N];
        out.points[static_cast<std::size_t>(j)] = {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
    }
    return out;
}

inline PointSet apply_affine(const PointSet& ps, const AffineTransform& a) {
    PointSet out;
    out.points.reserve(ps.size());
    for (const Vec2& p : ps.points) out.points.push_back(a.apply(p));
    out.visible = ps.visible;
    return out;
}

// Inverse-mapping warp with bilinear interpolation; samples falling outside
// the source domain [0, W-1] x [0, H-1] are 0.
inline FrameImage warp_image(const FrameImage& img, const AffineTransform& a) {
    const AffineTransform inv = a.inverse();  // throws SingularTransform
    FrameImage out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Vec2 s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!detail::inside_image(s, img.width, img.height)) continue;
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = detail::bilinear(img, s.x, s.y, c);
        }
    }
    return out;
}

// Binary mask: pixel center inside the polygon by the even-odd rule.
inline FrameImage rasterize_mask(const PointSet& ps, int w, int h) {
    if (ps.size() < 3) throw TooFewPoints("rasterize_mask: polygon needs >= 3 points");
    FrameImage out(w, h, 1);

    double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
    double min_y = min_x, max_y = max_x;
    for (const Vec2& p : ps.points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const int x0 = std::max(0, static_cast<int>(std::ceil(min_x)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(max_x)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(min_y)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(max_y)));

    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (detail::point_in_polygon(ps.points, x, y)) out.at(x, y) = 1.0;
    return out;
}

// Square context window around the bounding box:
// side = scale * sqrt((w + p)(h + p)), p = (w + h) / 2.
inline CropWindow crop_window(const PointSet& ps, double scale = 2.0) {
    if (ps.size() == 0) throw DegenerateBox("crop_window: empty point set");
    double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
    double min_y = min_x, max_y = max_x;
    for (const Vec2& p : ps.points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const double w = max_x - min_x;
    const double h = max_y - min_y;
    if (w == 0.0 && h == 0.0) throw DegenerateBox("crop_window: degenerate bounding box");
    const double context = 0.5 * (w + h);
    CropWindow win;
    win.center = {0.5 * (min_x + max_x), 0.5 * (min_y + max_y)};
    win.side = scale * std::sqrt((w + context) * (h + context));
    return win;
}

}  // namespace polytrack
