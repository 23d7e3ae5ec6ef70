#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "polytrack/gradcheck.hpp"
#include "polytrack/losses.hpp"
#include "polytrack/rng.hpp"

using namespace polytrack;

namespace {

PointSet make_set(std::vector<Vec2> pts) {
    PointSet ps;
    ps.points = std::move(pts);
    ps.visible.assign(ps.points.size(), 1);
    return ps;
}

PointSet random_set(Rng& rng, int n, double lo = 0.0, double hi = 20.0) {
    PointSet ps;
    for (int i = 0; i < n; ++i) ps.points.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
    ps.visible.assign(n, 1);
    return ps;
}

PointSet shifted(const PointSet& ps, std::size_t k) {
    PointSet out = ps;
    const std::size_t n = ps.size();
    for (std::size_t i = 0; i < n; ++i) out.points[i] = ps.points[(i + k) % n];
    return out;
}

const PointSet unit_square = make_set({{0, 0}, {1, 0}, {1, 1}, {0, 1}});

}  // namespace

TEST_CASE("smooth_l1 closed form") {
    CHECK(smooth_l1({0, 0}) == 0.0);
    CHECK(smooth_l1({0.5, 0}) == Catch::Approx(0.125).margin(1e-15));
    CHECK(smooth_l1({2, -0.5}) == Catch::Approx(1.625).margin(1e-15));
}

TEST_CASE("all losses vanish on identical inputs") {
    Rng rng(21);
    const PointSet ps = random_set(rng, 16);
    CHECK(point_set_matching_loss(ps, ps).value == 0.0);
    CHECK(paired_l1_loss(ps, ps).value == 0.0);
    CHECK(chamfer_loss(ps, ps).value == 0.0);
    CHECK(reg_first_derivative(ps, ps).value == 0.0);
    CHECK(reg_second_derivative(ps, ps).value == 0.0);
    CHECK(cycle_consistency_loss({ps, ps}, {ps, ps}).value == 0.0);

    FrameImage img(4, 4, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.1 * static_cast<double>(i % 7);
    FrameImage mask(4, 4, 1);
    mask.at(1, 1, 0) = mask.at(2, 2, 0) = 1.0;
    CHECK(pixel_matching_loss(img, img, mask).value == 0.0);
}

TEST_CASE("point set matching: square example and shift invariance") {
    PointSet pred = unit_square;
    for (Vec2& p : pred.points) p = p + Vec2{0.5, 0};
    const double got = point_set_matching_loss(unit_square, pred).value;
    CHECK(got == Catch::Approx(0.5).margin(1e-12));
    std::vector<Vec2> gt_pts = unit_square.points, pred_pts = pred.points;
    CHECK(got == Catch::Approx(oracle::point_set_matching(gt_pts, pred_pts)).margin(1e-12));

    Rng rng(22);
    const PointSet base = random_set(rng, 16);
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(point_set_matching_loss(base, shifted(base, k)).value <= 1e-12);
        // Relabeling either argument leaves the minimum unchanged.
        const PointSet other = random_set(rng, 16);
        const double v = point_set_matching_loss(base, other).value;
        CHECK(point_set_matching_loss(shifted(base, k), other).value ==
              Catch::Approx(v).margin(1e-9));
    }
}

TEST_CASE("point set matching gradient follows the arg-min shift") {
    Rng rng(23);
    const PointSet gt = random_set(rng, 9);
    const PointSet pred = random_set(rng, 9);
    const LossValue lv = point_set_matching_loss(gt, pred);
    REQUIRE(lv.grad.has_value());
    // Compare against finite differences of the full min; valid away from
    // shift ties, which a random instance avoids almost surely.
    for (std::size_t i = 0; i < 9; ++i) {
        for (int axis = 0; axis < 2; ++axis) {
            PointSet hi = pred, lo = pred;
            double& vh = axis == 0 ? hi.points[i].x : hi.points[i].y;
            double& vl = axis == 0 ? lo.points[i].x : lo.points[i].y;
            vh += 1e-6;
            vl -= 1e-6;
            const double fd = (oracle::point_set_matching(gt.points, hi.points) -
                               oracle::point_set_matching(gt.points, lo.points)) /
                              2e-6;
            const double an = axis == 0 ? (*lv.grad)[i].x : (*lv.grad)[i].y;
            CHECK(an == Catch::Approx(fd).epsilon(0.0).margin(1e-5));
        }
    }
}

TEST_CASE("pixel matching loss averages masked channel norms") {
    FrameImage a(2, 1, 1), b(2, 1, 1), mask(2, 1, 1);
    a.at(0, 0, 0) = 0.2;
    b.at(0, 0, 0) = 0.5;
    mask.at(0, 0, 0) = 1.0;
    CHECK(pixel_matching_loss(a, b, mask).value == Catch::Approx(0.3).margin(1e-15));

    // Two masked pixels with per-pixel norms 0.3 and 0.1 average to 0.2.
    a.at(1, 0, 0) = 0.4;
    b.at(1, 0, 0) = 0.3;
    mask.at(1, 0, 0) = 1.0;
    CHECK(pixel_matching_loss(a, b, mask).value == Catch::Approx(0.2).margin(1e-15));
    CHECK_FALSE(pixel_matching_loss(a, b, mask).grad.has_value());

    CHECK_THROWS_AS(pixel_matching_loss(a, b, FrameImage(2, 1, 1)), EmptyMask);
    CHECK_THROWS_AS(pixel_matching_loss(a, FrameImage(3, 1, 1), mask), SizeMismatch);
}

TEST_CASE("paired L1 examples") {
    CHECK(paired_l1_loss(make_set({{0, 0}}), make_set({{0.5, 0}})).value ==
          Catch::Approx(0.125).margin(1e-15));
    CHECK(paired_l1_loss(make_set({{0, 0}, {0, 0}}), make_set({{0.5, 0}, {2, 0}})).value ==
          Catch::Approx(1.625).margin(1e-15));
    CHECK_THROWS_AS(paired_l1_loss(make_set({{0, 0}}), unit_square), SizeMismatch);
}

TEST_CASE("chamfer examples, symmetry, and error case") {
    const double two_point =
        chamfer_loss(make_set({{0, 0}, {1, 0}}), make_set({{0, 0}, {0, 1}})).value;
    CHECK(two_point == Catch::Approx(1.0).margin(1e-12));
    CHECK(two_point ==
          Catch::Approx(oracle::chamfer({{0, 0}, {1, 0}}, {{0, 0}, {0, 1}})).margin(1e-12));

    CHECK(chamfer_loss(make_set({{0, 0}}), make_set({{3, 4}})).value ==
          Catch::Approx(10.0).margin(1e-12));

    Rng rng(24);
    const PointSet a = random_set(rng, 12), b = random_set(rng, 12);
    CHECK(chamfer_loss(a, b).value == Catch::Approx(chamfer_loss(b, a).value).margin(1e-12));
    CHECK(chamfer_loss(a, b).value == Catch::Approx(oracle::chamfer(a.points, b.points)).margin(1e-12));

    PointSet empty;
    CHECK_THROWS_AS(chamfer_loss(empty, a), EmptySet);
}

TEST_CASE("edge-length regularizer examples and invariances") {
    PointSet doubled = unit_square;
    for (Vec2& p : doubled.points) p = 2.0 * p;
    CHECK(reg_first_derivative(unit_square, doubled).value == Catch::Approx(4.0).margin(1e-12));
    CHECK(oracle::reg_first(unit_square.points, doubled.points) == Catch::Approx(4.0).margin(1e-12));

    Rng rng(25);
    const PointSet base = random_set(rng, 10);
    PointSet moved = base;
    for (Vec2& p : moved.points) p = p + Vec2{3.7, -1.2};
    CHECK(reg_first_derivative(base, moved).value <= 1e-12);
    CHECK(reg_second_derivative(base, moved).value <= 1e-12);

    // Simultaneous identical relabeling of both arguments: full-cycle sums.
    const PointSet cur = random_set(rng, 10);
    for (std::size_t k = 0; k < 10; ++k) {
        CHECK(reg_first_derivative(shifted(base, k), shifted(cur, k)).value ==
              Catch::Approx(reg_first_derivative(base, cur).value).margin(1e-9));
        CHECK(reg_second_derivative(shifted(base, k), shifted(cur, k)).value ==
              Catch::Approx(reg_second_derivative(base, cur).value).margin(1e-9));
    }
}

TEST_CASE("second-difference regularizer perturbation example") {
    PointSet moved = unit_square;
    moved.points[0] = moved.points[0] + Vec2{0.1, 0};
    const double got = reg_second_derivative(unit_square, moved).value;
    CHECK(got == Catch::Approx(0.4).margin(1e-12));
    CHECK(got == Catch::Approx(oracle::reg_second(unit_square.points, moved.points)).margin(1e-12));
}

TEST_CASE("cycle consistency examples") {
    const PointSet a = make_set({{0, 0}});
    const PointSet b = make_set({{0.5, 0}});
    CHECK(cycle_consistency_loss({a}, {b}).value == Catch::Approx(0.125).margin(1e-15));
    CHECK(cycle_consistency_loss({a, a}, {b, a}).value == Catch::Approx(0.0625).margin(1e-15));
    CHECK_THROWS_AS(cycle_consistency_loss({a}, {a, a}), SizeMismatch);
    CHECK_THROWS_AS(cycle_consistency_loss({a}, {unit_square}), SizeMismatch);
}

TEST_CASE("analytic gradients match finite differences") {
    for (const GradCheckReport& r : run_gradient_checks(25, 12)) {
        INFO(r.name << " max_rel_err=" << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("losses are non-negative on random inputs") {
    Rng rng(26);
    for (int trial = 0; trial < 30; ++trial) {
        const PointSet a = random_set(rng, 8), b = random_set(rng, 8);
        CHECK(point_set_matching_loss(a, b).value >= 0.0);
        CHECK(paired_l1_loss(a, b).value >= 0.0);
        CHECK(chamfer_loss(a, b).value >= 0.0);
        CHECK(reg_first_derivative(a, b).value >= 0.0);
        CHECK(reg_second_derivative(a, b).value >= 0.0);
        CHECK(cycle_consistency_loss({a}, {b}).value >= 0.0);
    }
}
