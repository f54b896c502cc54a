#include <cmath>

#include <gtest/gtest.h>

#include "rht/core/random.hpp"
#include "rht/heatmaps.hpp"

using namespace rht;

namespace {

LandmarkSet one_point(double x, double y) { return LandmarkSet::visible_points({{x, y}}, {16, 16}); }

} // namespace

TEST(RenderLandmarks, PeakAndNeighbourAtPixelCentre)
{
    const auto s = render_landmark_heatmaps(one_point(8, 8), {16, 16}, 1.5);
    ASSERT_EQ(s.channels(), 1u);
    EXPECT_EQ(s.data(8, 8, 0), 1.0);
    EXPECT_NEAR(s.data(8, 9, 0), 0.8007374029168081, 1e-12);
    EXPECT_DOUBLE_EQ(s.data(8, 9, 0), std::exp(-1.0 / 4.5));
}

TEST(RenderLandmarks, HalfPixelOffsetGivesFourEqualMaxima)
{
    const auto s = render_landmark_heatmaps(one_point(7.5, 7.5), {16, 16}, 1.5);
    const double expected = std::exp(-0.5 / 4.5);
    for (auto [y, x] : {std::pair{7, 7}, {7, 8}, {8, 7}, {8, 8}})
        EXPECT_DOUBLE_EQ(s.data(y, x, 0), expected);
    double mx = 0;
    for (double v : s.data.values())
        mx = std::max(mx, v);
    EXPECT_DOUBLE_EQ(mx, expected);
}

TEST(RenderLandmarks, InvisibleChannelIsZero)
{
    auto lm = LandmarkSet::visible_points({{3, 3}, {9, 9}}, {16, 16});
    lm.visibility[1] = 0;
    const auto s = render_landmark_heatmaps(lm, {16, 16}, 1.5);
    for (std::size_t i = 0; i < s.data.pixels(); ++i)
        EXPECT_EQ(s.data.pixel(i)[1], 0.0);
    EXPECT_EQ(s.data(3, 3, 0), 1.0);
}

TEST(RenderLandmarks, RejectsBadArguments)
{
    EXPECT_THROW(render_landmark_heatmaps(one_point(1, 1), {16, 16}, 0.0), InvalidArgument);
    EXPECT_THROW(render_landmark_heatmaps(one_point(1, 1), {16, 16}, -1.0), InvalidArgument);
    EXPECT_THROW(render_landmark_heatmaps(LandmarkSet{}, {16, 16}, 1.5), InvalidArgument);
}

TEST(RenderBoundaries, OnSegmentIsOne)
{
    const auto lm = LandmarkSet::visible_points({{2, 8}, {13, 8}}, {16, 16});
    const BoundaryDefinition b{{{0, 1}}};
    const auto s = render_boundary_heatmaps(lm, b, {16, 16}, 1.5);
    ASSERT_EQ(s.boundary_channels, 1u);
    for (std::size_t x = 2; x <= 13; ++x)
        EXPECT_EQ(s.data(8, x, 0), 1.0) << x;
}

TEST(RenderBoundaries, OffSegmentValueAndCutoff)
{
    const auto lm = LandmarkSet::visible_points({{2, 8}, {13, 8}}, {16, 16});
    const BoundaryDefinition b{{{0, 1}}};
    const auto s = render_boundary_heatmaps(lm, b, {16, 16}, 1.5);
    // Distance 4 is inside the 3 sigma = 4.5 cutoff.
    EXPECT_NEAR(s.data(12, 8, 0), std::exp(-16.0 / 4.5), 1e-15);
    EXPECT_NEAR(s.data(12, 8, 0), 0.0286, 1e-4);
    // Distance 5 is beyond it.
    EXPECT_EQ(s.data(13, 8, 0), 0.0);
    EXPECT_EQ(s.data(3, 8, 0), 0.0);
}

TEST(RenderBoundaries, PolylineUsesNearestSegment)
{
    // L-shaped polyline (2,2) -> (10,2) -> (10,10).
    const auto lm = LandmarkSet::visible_points({{2, 2}, {10, 2}, {10, 10}}, {16, 16});
    const auto s = render_boundary_heatmaps(lm, {{{0, 1, 2}}}, {16, 16}, 1.5);
    EXPECT_EQ(s.data(6, 10, 0), 1.0);
    EXPECT_NEAR(s.data(6, 12, 0), std::exp(-4.0 / 4.5), 1e-15);
    // (13, 0) is nearest to the corner (10, 2): d^2 = 9 + 4.
    EXPECT_NEAR(s.data(0, 13, 0), std::exp(-13.0 / 4.5), 1e-15);
}

TEST(RenderBoundaries, InvisiblePointsAreSkipped)
{
    auto lm = LandmarkSet::visible_points({{2, 8}, {8, 2}, {13, 8}}, {16, 16});
    lm.visibility[1] = 0;
    const auto s = render_boundary_heatmaps(lm, {{{0, 1, 2}}}, {16, 16}, 1.5);
    EXPECT_EQ(s.data(8, 8, 0), 1.0);
}

TEST(RenderBoundaries, EmptyDefinitionGivesNoChannels)
{
    const auto s = render_boundary_heatmaps(one_point(4, 4), BoundaryDefinition{}, {16, 16}, 1.5);
    EXPECT_EQ(s.channels(), 0u);
    EXPECT_EQ(s.boundary_channels, 0u);
}

TEST(RenderBoundaries, RejectsOutOfRangeIndex)
{
    EXPECT_THROW(render_boundary_heatmaps(one_point(4, 4), {{{0, 1}}}, {16, 16}, 1.5), InvalidArgument);
}

TEST(RenderHeatmaps, ValuesInUnitIntervalAndExactlyZeroBeyondCutoff)
{
    Rng rng(11);
    std::vector<Point2> pts;
    for (int i = 0; i < 6; ++i)
        pts.push_back({rng.uniform(0, 31), rng.uniform(0, 31)});
    const BoundaryDefinition b{{{0, 1, 2}, {3, 4, 5}}};
    const auto lm = LandmarkSet::visible_points(pts, {32, 32});
    const auto s = render_heatmaps(lm, b, {32, 32}, 2.0);
    ASSERT_EQ(s.channels(), 8u);
    for (double v : s.data.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // Far from every segment of boundary 0 the channel is exactly zero.
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            double d = INFINITY;
            for (int seg = 0; seg < 2; ++seg) {
                const Point2 a = pts[static_cast<std::size_t>(seg)], c = pts[static_cast<std::size_t>(seg + 1)];
                const double dx = c.x - a.x, dy = c.y - a.y;
                double t = ((double(x) - a.x) * dx + (double(y) - a.y) * dy) / (dx * dx + dy * dy);
                t = std::clamp(t, 0.0, 1.0);
                d = std::min(d, std::hypot(double(x) - a.x - t * dx, double(y) - a.y - t * dy));
            }
            if (d > 6.0 + 1e-9)
                EXPECT_EQ(s.data(y, x, 6), 0.0);
            else
                EXPECT_NEAR(s.data(y, x, 6), std::exp(-d * d / 8.0), 1e-12);
        }
}

TEST(RenderHeatmaps, OrderInvarianceUpToPermutation)
{
    const auto a = render_landmark_heatmaps(LandmarkSet::visible_points({{3, 4}, {10, 12}}), {16, 16}, 1.5);
    const auto b = render_landmark_heatmaps(LandmarkSet::visible_points({{10, 12}, {3, 4}}), {16, 16}, 1.5);
    for (std::size_t i = 0; i < a.data.pixels(); ++i) {
        EXPECT_EQ(a.data.pixel(i)[0], b.data.pixel(i)[1]);
        EXPECT_EQ(a.data.pixel(i)[1], b.data.pixel(i)[0]);
    }
}

TEST(Decode, PixelCentreRecoveredExactly)
{
    const auto s = render_landmark_heatmaps(one_point(8, 8), {16, 16}, 1.5);
    for (auto method : {DecodeMethod::log_parabola, DecodeMethod::centroid}) {
        const auto d = decode_heatmaps(s, method);
        EXPECT_NEAR(d.points[0].x, 8.0, 1e-6);
        EXPECT_NEAR(d.points[0].y, 8.0, 1e-6);
        EXPECT_EQ(d.visibility[0], 1);
    }
}

TEST(Decode, SubPixelLandmark)
{
    const auto s = render_landmark_heatmaps(one_point(7.3, 8.0), {16, 16}, 1.5);
    const auto d = decode_heatmaps(s);
    EXPECT_NEAR(d.points[0].x, 7.3, 0.2);
    EXPECT_NEAR(d.points[0].y, 8.0, 0.2);
    // The log-parabola fit is exact for an untruncated Gaussian.
    EXPECT_NEAR(d.points[0].x, 7.3, 1e-9);
}

TEST(Decode, CentroidMatchesHandComputedWindow)
{
    const auto s = render_landmark_heatmaps(one_point(7.3, 8.0), {16, 16}, 1.5);
    double sw = 0, sx = 0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const double w = std::exp(-((7 + dx - 7.3) * (7 + dx - 7.3) + dy * dy) / 4.5);
            sw += w;
            sx += w * (7 + dx);
        }
    const auto d = decode_heatmaps(s, DecodeMethod::centroid);
    EXPECT_NEAR(d.points[0].x, sx / sw, 1e-12);
    EXPECT_NEAR(d.points[0].y, 8.0, 1e-12);
}

TEST(Decode, AllZeroChannelIsInvisibleAtOrigin)
{
    HeatmapStack<double> s{Volume<double>(8, 8, 1), 1, 0, 1.5};
    const auto d = decode_heatmaps(s);
    EXPECT_EQ(d.visibility[0], 0);
    EXPECT_EQ(d.points[0].x, 0.0);
    EXPECT_EQ(d.points[0].y, 0.0);
}

TEST(Decode, TiesGoToSmallestLinearIndex)
{
    HeatmapStack<double> s{Volume<double>(8, 8, 1), 1, 0, 1.5};
    s.data(2, 5, 0) = 1.0;
    s.data(4, 1, 0) = 1.0;
    const auto d = decode_heatmaps(s, DecodeMethod::centroid);
    EXPECT_NEAR(d.points[0].x, 5.0, 1e-12);
    EXPECT_NEAR(d.points[0].y, 2.0, 1e-12);
}

TEST(Decode, RejectsStackWithoutLandmarks)
{
    HeatmapStack<double> s{Volume<double>(8, 8, 1), 0, 1, 1.5};
    EXPECT_THROW(decode_heatmaps(s), InvalidArgument);
}

TEST(Decode, RoundTripWithinTolerance)
{
    Rng rng(5);
    for (double sigma : {1.0, 1.5, 2.0, 3.0})
        for (int t = 0; t < 50; ++t) {
            const double x = rng.uniform(0, 31), y = rng.uniform(0, 31);
            const auto s = render_landmark_heatmaps(LandmarkSet::visible_points({{x, y}}), {32, 32}, sigma);
            for (auto method : {DecodeMethod::log_parabola, DecodeMethod::centroid}) {
                const auto d = decode_heatmaps(s, method);
                const double tol = method == DecodeMethod::log_parabola ? 0.2 : 0.5;
                EXPECT_NEAR(d.points[0].x, x, tol) << "sigma " << sigma;
                EXPECT_NEAR(d.points[0].y, y, tol) << "sigma " << sigma;
            }
        }
}
