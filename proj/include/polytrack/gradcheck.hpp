#pragma once

// Central finite-difference verification of every analytic gradient in the
// toolkit. Random instances are resampled when they land near a smooth-L1
// kink, a nearest-neighbor tie, or a vanishing norm, where the derivative
// genuinely does not exist.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "polytrack/lam.hpp"
#include "polytrack/losses.hpp"
#include "polytrack/rng.hpp"

namespace polytrack {

struct GradCheckReport {
    std::string name;
    int instances = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline PointSet random_set(Rng& rng, int n, double lo = 0.0, double hi = 100.0) {
    PointSet ps;
    for (int i = 0; i < n; ++i) ps.points.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
    ps.visible.assign(static_cast<std::size_t>(n), 1);
    return ps;
}

// True when any per-coordinate difference sits within margin of the
// smooth-L1 kink at |x| = 1.
inline bool near_kink(const PointSet& a, const PointSet& b, double margin = 1e-3) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vec2 d = a.points[i] - b.points[i];
        if (std::abs(std::abs(d.x) - 1.0) < margin) return true;
        if (std::abs(std::abs(d.y) - 1.0) < margin) return true;
    }
    return false;
}

// Central finite difference of f along coordinate k of a flat copy of the
// points in ps (layout x0, y0, x1, y1, ...).
template <class F>
double fd_point(F&& f, PointSet ps, std::size_t k, double step) {
    double* coord = k % 2 == 0 ? &ps.points[k / 2].x : &ps.points[k / 2].y;
    const double saved = *coord;
    *coord = saved + step;
    const double hi = f(ps);
    *coord = saved - step;
    const double lo = f(ps);
    return (hi - lo) / (2.0 * step);
}

template <class MakeInstance, class Eval, class Analytic>
GradCheckReport check_point_loss(const std::string& name, int instances, double step,
                                 double tol, Rng& rng, MakeInstance&& make, Eval&& eval,
                                 Analytic&& analytic) {
    GradCheckReport rep{name, instances, 0.0, tol, true};
    for (int it = 0; it < instances; ++it) {
        auto [fixed, moving] = make(rng);
        const std::vector<Vec2> grad = analytic(fixed, moving);
        for (std::size_t k = 0; k < 2 * moving.size(); ++k) {
            const double fd =
                fd_point([&](const PointSet& m) { return eval(fixed, m); }, moving, k, step);
            const double an = k % 2 == 0 ? grad[k / 2].x : grad[k / 2].y;
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(fd, an));
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

}  // namespace detail

inline GradCheckReport check_paired_l1(int instances = 100, int n = 16,
                                       std::uint64_t seed = 1) {
    Rng rng(seed);
    return detail::check_point_loss(
        "paired_l1_loss", instances, 1e-5, 1e-4, rng,
        [&](Rng& r) {
            PointSet gt, pred;
            do {
                gt = detail::random_set(r, n);
                pred = detail::random_set(r, n);
            } while (detail::near_kink(gt, pred));
            return std::pair{gt, pred};
        },
        [](const PointSet& gt, const PointSet& pred) { return paired_l1_loss(gt, pred).value; },
        [](const PointSet& gt, const PointSet& pred) { return *paired_l1_loss(gt, pred).grad; });
}

inline GradCheckReport check_chamfer(int instances = 100, int n = 16, std::uint64_t seed = 2) {
    Rng rng(seed);
    auto tie_prone = [n](const PointSet& gt, const PointSet& pred) {
        // Resample when two candidate nearest neighbors are nearly tied or
        // a pair coincides (the norm is not differentiable at 0).
        for (int j = 0; j < n; ++j) {
            double best = 1e18, second = 1e18;
            for (int i = 0; i < n; ++i) {
                const double d = norm(gt.points[static_cast<std::size_t>(i)] -
                                      pred.points[static_cast<std::size_t>(j)]);
                if (d < best) {
                    second = best;
                    best = d;
                } else {
                    second = std::min(second, d);
                }
            }
            if (best < 1e-3 || second - best < 1e-3) return true;
        }
        for (int i = 0; i < n; ++i) {
            double best = 1e18, second = 1e18;
            for (int j = 0; j < n; ++j) {
                const double d = norm(gt.points[static_cast<std::size_t>(i)] -
                                      pred.points[static_cast<std::size_t>(j)]);
                if (d < best) {
                    second = best;
                    best = d;
                } else {
                    second = std::min(second, d);
                }
            }
            if (best < 1e-3 || second - best < 1e-3) return true;
        }
        return false;
    };
    return detail::check_point_loss(
        "chamfer_loss", instances, 1e-5, 1e-4, rng,
        [&](Rng& r) {
            PointSet gt, pred;
            do {
                gt = detail::random_set(r, n);
                pred = detail::random_set(r, n);
            } while (tie_prone(gt, pred));
            return std::pair{gt, pred};
        },
        [](const PointSet& gt, const PointSet& pred) { return chamfer_loss(gt, pred).value; },
        [](const PointSet& gt, const PointSet& pred) { return *chamfer_loss(gt, pred).grad; });
}

inline GradCheckReport check_reg_first(int instances = 100, int n = 16,
                                       std::uint64_t seed = 3) {
    Rng rng(seed);
    return detail::check_point_loss(
        "reg_first_derivative", instances, 1e-5, 1e-4, rng,
        [&](Rng& r) {
            PointSet prev, cur;
            auto short_edge = [n](const PointSet& ps) {
                for (int i = 0; i < n; ++i)
                    if (norm(ps.points[static_cast<std::size_t>(i)] -
                             ps.points[static_cast<std::size_t>((i + n - 1) % n)]) < 1e-2)
                        return true;
                return false;
            };
            do {
                prev = detail::random_set(r, n);
                cur = detail::random_set(r, n);
            } while (short_edge(cur));
            return std::pair{prev, cur};
        },
        [](const PointSet& prev, const PointSet& cur) {
            return reg_first_derivative(prev, cur).value;
        },
        [](const PointSet& prev, const PointSet& cur) {
            return *reg_first_derivative(prev, cur).grad;
        });
}

inline GradCheckReport check_reg_second(int instances = 100, int n = 16,
                                        std::uint64_t seed = 4) {
    Rng rng(seed);
    return detail::check_point_loss(
        "reg_second_derivative", instances, 1e-5, 1e-4, rng,
        [&](Rng& r) {
            // The norm of the second-difference change must stay away from 0.
            PointSet prev, cur;
            auto degenerate = [n](const PointSet& p, const PointSet& c) {
                for (int i = 0; i < n; ++i) {
                    const std::size_t im1 = static_cast<std::size_t>((i + n - 1) % n);
                    const std::size_t ip1 = static_cast<std::size_t>((i + 1) % n);
                    const std::size_t ii = static_cast<std::size_t>(i);
                    const Vec2 dc = c.points[ip1] - 2.0 * c.points[ii] + c.points[im1];
                    const Vec2 dp = p.points[ip1] - 2.0 * p.points[ii] + p.points[im1];
                    if (norm(dc - dp) < 1e-2) return true;
                }
                return false;
            };
            do {
                prev = detail::random_set(r, n);
                cur = detail::random_set(r, n);
            } while (degenerate(prev, cur));
            return std::pair{prev, cur};
        },
        [](const PointSet& prev, const PointSet& cur) {
            return reg_second_derivative(prev, cur).value;
        },
        [](const PointSet& prev, const PointSet& cur) {
            return *reg_second_derivative(prev, cur).grad;
        });
}

inline GradCheckReport check_cycle(int instances = 100, int n = 16, int k = 3,
                                   std::uint64_t seed = 5) {
    Rng rng(seed);
    GradCheckReport rep{"cycle_consistency_loss", instances, 0.0, 1e-4, true};
    const double step = 1e-5;
    for (int it = 0; it < instances; ++it) {
        std::vector<PointSet> fwd, bwd;
        bool bad = true;
        while (bad) {
            fwd.clear();
            bwd.clear();
            bad = false;
            for (int t = 0; t < k; ++t) {
                fwd.push_back(detail::random_set(rng, n));
                bwd.push_back(detail::random_set(rng, n));
                if (detail::near_kink(fwd.back(), bwd.back())) bad = true;
            }
        }
        const auto grad = *cycle_consistency_loss(fwd, bwd).grad;
        for (int t = 0; t < k; ++t) {
            for (std::size_t c = 0; c < 2 * static_cast<std::size_t>(n); ++c) {
                auto fwd_mod = fwd;
                double* coord = c % 2 == 0
                                    ? &fwd_mod[static_cast<std::size_t>(t)].points[c / 2].x
                                    : &fwd_mod[static_cast<std::size_t>(t)].points[c / 2].y;
                const double saved = *coord;
                *coord = saved + step;
                const double hi = cycle_consistency_loss(fwd_mod, bwd).value;
                *coord = saved - step;
                const double lo = cycle_consistency_loss(fwd_mod, bwd).value;
                const double fd = (hi - lo) / (2.0 * step);
                const Vec2 g = grad[static_cast<std::size_t>(t) * n + c / 2];
                rep.max_rel_err =
                    std::max(rep.max_rel_err, detail::rel_err(fd, c % 2 == 0 ? g.x : g.y));
            }
        }
    }
    rep.pass = rep.max_rel_err < rep.tolerance;
    return rep;
}

// Manual backprop through the full network against finite differences on a
// tiny configuration; the loss is the plain sum of all offsets.
inline GradCheckReport check_lam_backprop(int n = 8, int c_hidden = 8, int blocks = 2,
                                          std::uint64_t seed = 6) {
    GradCheckReport rep{"lam_backprop", 1, 0.0, 1e-3, true};
    const int c_feat = 3;
    LamParams params = make_lam_params(c_feat, c_hidden, blocks, 2, 3, true);
    Rng rng(seed);
    randomize(params, rng, 0.3);

    Mat feats(n, c_feat);
    for (double& v : feats.data) v = rng.uniform(-1.0, 1.0);
    PointSet ps = detail::random_set(rng, n);
    LamState state = LamState::zeros(n, c_hidden);
    for (double& v : state.h.data) v = rng.uniform(-0.5, 0.5);
    for (double& v : state.c.data) v = rng.uniform(-0.5, 0.5);

    auto loss = [&](const LamParams& p) {
        const LamOutput out = lam_forward(feats, ps, state, p);
        double s = 0.0;
        for (double v : out.offsets.data) s += v;
        return s;
    };

    LamTape tape;
    lam_forward(feats, ps, state, params, &tape);
    LamParams grad = zeros_like(params);
    Mat d_off(n, 2);
    for (double& v : d_off.data) v = 1.0;
    lam_backward(tape, params, d_off, grad);

    const double step = 1e-4;
    // Probe a deterministic sparse subset of each tensor (all of it for
    // small tensors); full FD over every weight would dominate runtime.
    std::vector<std::vector<double>*> grad_tensors;
    for_each_tensor(grad, [&](const std::string&, std::vector<double>& v,
                              const std::vector<std::size_t>&) { grad_tensors.push_back(&v); });
    std::size_t ti = 0;
    for_each_tensor(params, [&](const std::string&, std::vector<double>& v,
                                const std::vector<std::size_t>&) {
        const std::vector<double>& g = *grad_tensors[ti++];
        const std::size_t stride = v.size() <= 64 ? 1 : v.size() / 64;
        for (std::size_t i = 0; i < v.size(); i += stride) {
            const double saved = v[i];
            v[i] = saved + step;
            const double hi = loss(params);
            v[i] = saved - step;
            const double lo = loss(params);
            v[i] = saved;
            const double fd = (hi - lo) / (2.0 * step);
            rep.max_rel_err = std::max(rep.max_rel_err, detail::rel_err(fd, g[i]));
        }
    });
    rep.pass = rep.max_rel_err < rep.tolerance;
    return rep;
}

inline std::vector<GradCheckReport> run_gradient_checks(int instances = 100, int n = 16) {
    return {check_paired_l1(instances, n),  check_chamfer(instances, n),
            check_reg_first(instances, n),  check_reg_second(instances, n),
            check_cycle(instances, n),      check_lam_backprop()};
}

}  // namespace polytrack
