#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "polytrack/metrics.hpp"

using namespace polytrack;

namespace {

// D = 100 makes thresholds easy to read: tau .04 -> 4 px.
TrackAnnotation ann_100(std::vector<std::vector<Vec2>> frames) {
    TrackAnnotation a;
    a.width = 60;
    a.height = 80;
    for (auto& f : frames) {
        PointSet ps;
        ps.points = std::move(f);
        ps.visible.assign(ps.points.size(), 1);
        a.frames.push_back(std::move(ps));
    }
    return a;
}

FrameImage mask_from_rows(const std::vector<std::string>& rows) {
    FrameImage m(static_cast<int>(rows[0].size()), static_cast<int>(rows.size()), 1);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) m.at(x, y, 0) = rows[y][x] == '#' ? 1.0 : 0.0;
    return m;
}

}  // namespace

TEST_CASE("spatial accuracy thresholds at tau times the diagonal") {
    const TrackAnnotation gt = ann_100({{{10, 10}, {30, 30}}});
    TrackAnnotation pred = gt;
    pred.frames[0].points[0].x += 1.0;   // 1 px error: inside 4 px
    pred.frames[0].points[1].x += 10.0;  // 10 px error: outside

    CHECK(spatial_accuracy(gt, gt, 0.04) == 1.0);
    CHECK(spatial_accuracy(pred, gt, 0.04) == 0.5);

    TrackAnnotation far = gt;
    for (Vec2& p : far.frames[0].points) p.x += 50.0;
    CHECK(spatial_accuracy(far, gt, 0.04) == 0.0);

    // Strict inequality: an error of exactly tau*D does not count.
    TrackAnnotation edge = gt;
    edge.frames[0].points[0].x += 4.0;
    edge.frames[0].points[1].x += 4.0;
    CHECK(spatial_accuracy(edge, gt, 0.04) == 0.0);
}

TEST_CASE("spatial accuracy counts only gt-visible points") {
    TrackAnnotation gt = ann_100({{{10, 10}, {30, 30}}});
    TrackAnnotation pred = gt;
    pred.frames[0].points[1].x += 10.0;

    CHECK(spatial_accuracy(pred, gt, 0.04) == 0.5);
    gt.frames[0].visible[1] = 0;  // drop the bad point from the average
    CHECK(spatial_accuracy(pred, gt, 0.04) == 1.0);
    gt.frames[0].visible = {0, 1};  // keep only the bad point
    CHECK(spatial_accuracy(pred, gt, 0.04) == 0.0);
    gt.frames[0].visible = {0, 0};
    CHECK_THROWS_AS(spatial_accuracy(pred, gt, 0.04), NoVisiblePoints);
}

TEST_CASE("temporal accuracy measures error drift") {
    const TrackAnnotation gt = ann_100({{{10, 10}}, {{20, 10}}});

    CHECK(temporal_accuracy(gt, gt, 0.04) == 1.0);

    // Constant offset tracking is temporally perfect.
    TrackAnnotation offset = gt;
    for (PointSet& f : offset.frames)
        for (Vec2& p : f.points) p = p + Vec2{7.0, -3.0};
    CHECK(temporal_accuracy(offset, gt, 0.04) == 1.0);

    // e_0 = 0, e_1 = (10, 0): drift 10 px >= 4 px.
    TrackAnnotation drift = gt;
    drift.frames[1].points[0].x += 10.0;
    CHECK(temporal_accuracy(drift, gt, 0.04) == 0.0);

    const TrackAnnotation single = ann_100({{{10, 10}}});
    CHECK_THROWS_AS(temporal_accuracy(single, single, 0.04), TooFewFrames);
}

TEST_CASE("temporal accuracy needs visibility at both endpoints") {
    TrackAnnotation gt = ann_100({{{10, 10}, {30, 30}}, {{10, 10}, {30, 30}}});
    TrackAnnotation pred = gt;
    pred.frames[1].points[0].x += 10.0;  // drifting point

    CHECK(temporal_accuracy(pred, gt, 0.04) == 0.5);
    gt.frames[0].visible[0] = 0;  // invisible at t-1 excludes the pair
    CHECK(temporal_accuracy(pred, gt, 0.04) == 1.0);
}

TEST_CASE("accuracy metrics are monotone in tau") {
    TrackAnnotation gt = ann_100({{{10, 10}, {30, 30}, {50, 40}}, {{12, 10}, {30, 33}, {50, 40}}});
    TrackAnnotation pred = gt;
    double bump = 0.4;
    for (PointSet& f : pred.frames)
        for (Vec2& p : f.points) p.x += (bump *= 2.2);

    double prev_sa = -1.0, prev_ta = -1.0;
    for (double tau : {0.01, 0.02, 0.04, 0.08, 0.16, 0.32}) {
        const double sa = spatial_accuracy(pred, gt, tau);
        const double ta = temporal_accuracy(pred, gt, tau);
        CHECK(sa >= prev_sa);
        CHECK(ta >= prev_ta);
        prev_sa = sa;
        prev_ta = ta;
    }
    CHECK(spatial_accuracy(pred, gt, 32.0) == 1.0);
}

TEST_CASE("region similarity counts pixel overlap") {
    const FrameImage a = mask_from_rows({"##..", "##..", "...."});
    const FrameImage b = mask_from_rows({".##.", ".##.", "...."});
    CHECK(region_similarity(a, a) == 1.0);
    CHECK(region_similarity(a, b) == Catch::Approx(2.0 / 6.0).margin(1e-15));

    const FrameImage c = mask_from_rows({"...#", "....", "...."});
    CHECK(region_similarity(a, c) == 0.0);

    const FrameImage empty(4, 3, 1);
    CHECK(region_similarity(empty, empty) == 1.0);
    CHECK_THROWS_AS(region_similarity(a, FrameImage(5, 3, 1)), SizeMismatch);
}

TEST_CASE("boundary accuracy matches boundaries within the tolerance radius") {
    // Both masks stay clear of the raster edge: boundary extraction only
    // looks at in-image neighbours, so a shape touching the edge loses its
    // outermost pixels from the boundary set.
    const FrameImage sq = mask_from_rows({
        "........",
        "........",
        "..###...",
        "..###...",
        "..###...",
        "........",
        "........",
    });
    const FrameImage dilated = mask_from_rows({
        "........",
        "..###...",
        ".#####..",
        ".#####..",
        ".#####..",
        "..###...",
        "........",
    });
    CHECK(boundary_accuracy(sq, sq) == 1.0);
    // One-pixel 4-connected dilation keeps every boundary pixel within
    // distance 1, and ceil(0.008 * D) is 1 for any small raster.
    CHECK(boundary_accuracy(dilated, sq) == 1.0);

    CHECK(boundary_accuracy(FrameImage(8, 7, 1), sq) == 0.0);
    CHECK(boundary_accuracy(FrameImage(8, 7, 1), FrameImage(8, 7, 1)) == 1.0);
}

TEST_CASE("average accuracy is the agreement fraction") {
    FrameImage a(10, 10, 1), b(10, 10, 1);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 10; ++x) a.at(x, y, 0) = b.at(x, y, 0) = 1.0;
    CHECK(average_accuracy(a, b) == 1.0);
    b.at(7, 7, 0) = 1.0;
    CHECK(average_accuracy(a, b) == Catch::Approx(0.99).margin(1e-15));

    FrameImage inv = a;
    for (double& v : inv.data) v = 1.0 - v;
    CHECK(average_accuracy(a, inv) == 0.0);
}

TEST_CASE("sequence stats on normalized coordinates") {
    TrackAnnotation still;
    still.width = 100;
    still.height = 50;
    PointSet ps;
    ps.points = {{10, 10}, {20, 10}, {20, 20}, {10, 20}};
    ps.visible.assign(4, 1);
    still.frames = {ps, ps, ps};
    const auto [mo0, sc0] = sequence_stats(still);
    CHECK(mo0 == 0.0);
    CHECK(sc0 == 0.0);

    // Each point moves 1 px in x per frame: 0.01 after dividing by W=100.
    TrackAnnotation moving = still;
    moving.frames.resize(2);
    for (Vec2& p : moving.frames[1].points) p.x += 1.0;
    const auto [mo1, sc1] = sequence_stats(moving);
    CHECK(mo1 == Catch::Approx(0.01).margin(1e-12));
    CHECK(sc1 == Catch::Approx(0.0).margin(1e-12));

    TrackAnnotation single = still;
    single.frames.resize(1);
    CHECK_THROWS_AS(sequence_stats(single), TooFewFrames);
}
