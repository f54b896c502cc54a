#include <cmath>

#include <gtest/gtest.h>

#include "rht/core/random.hpp"
#include "rht/metrics.hpp"

using namespace rht;

namespace {

NormalizationSpec corners(std::size_t l, std::size_t r)
{
    NormalizationSpec s;
    s.kind = NormalizationKind::interocular;
    s.left_corner = l;
    s.right_corner = r;
    return s;
}

} // namespace

TEST(Nme, ZeroForExactPrediction)
{
    const auto t = LandmarkSet::visible_points({{0, 0}, {10, 0}, {4, 7}});
    EXPECT_EQ(nme(t, t, corners(0, 1)), 0.0);
}

TEST(Nme, ThreeFourFiveExample)
{
    const auto truth = LandmarkSet::visible_points({{0, 0}, {10, 0}});
    const auto pred = LandmarkSet::visible_points({{3, 4}, {10, 0}});
    EXPECT_EQ(nme(pred, truth, corners(0, 1)), 0.25);
}

TEST(Nme, BoxGeometricMean)
{
    const auto spec = NormalizationSpec::with_box(NormalizationKind::box_geomean, {100, 64});
    const auto truth = LandmarkSet::visible_points({{50, 30}});
    EXPECT_EQ(normalization_distance(truth, spec), 80.0);
    EXPECT_DOUBLE_EQ(nme(LandmarkSet::visible_points({{58, 30}}), truth, spec), 0.1);
    const auto diag = NormalizationSpec::with_box(NormalizationKind::diag, {30, 40});
    EXPECT_EQ(normalization_distance(truth, diag), 50.0);
}

TEST(Nme, InterpupilUsesGroupCentroids)
{
    NormalizationSpec s;
    s.kind = NormalizationKind::interpupil;
    s.left_pupil = {0, 1};
    s.right_pupil = {2, 3};
    const auto t = LandmarkSet::visible_points({{0, -1}, {0, 1}, {6, -2}, {6, 2}});
    EXPECT_EQ(normalization_distance(t, s), 6.0);
}

TEST(Nme, VisibleOnlyExcludesHiddenLandmarks)
{
    auto truth = LandmarkSet::visible_points({{0, 0}, {10, 0}, {5, 5}});
    truth.visibility[2] = 0;
    const auto pred = LandmarkSet::visible_points({{0, 0}, {10, 0}, {5, 15}});
    EXPECT_DOUBLE_EQ(nme(pred, truth, corners(0, 1)), 1.0 / 3.0);
    EXPECT_EQ(nme(pred, truth, corners(0, 1), true), 0.0);
}

TEST(Nme, TranslationInvariantAndInverseInDistance)
{
    Rng rng(1);
    std::vector<Point2> t, p;
    for (int i = 0; i < 10; ++i) {
        t.push_back({rng.uniform(0, 100), rng.uniform(0, 100)});
        p.push_back({t.back().x + rng.uniform(-2, 2), t.back().y + rng.uniform(-2, 2)});
    }
    const auto base = nme(LandmarkSet::visible_points(p), LandmarkSet::visible_points(t), corners(0, 1));
    for (auto& q : t)
        q = {q.x + 17.5, q.y - 3.25};
    for (auto& q : p)
        q = {q.x + 17.5, q.y - 3.25};
    EXPECT_NEAR(nme(LandmarkSet::visible_points(p), LandmarkSet::visible_points(t), corners(0, 1)), base, 1e-12);

    const auto truth = LandmarkSet::visible_points(t), pred = LandmarkSet::visible_points(p);
    const auto a = nme(pred, truth, NormalizationSpec::with_box(NormalizationKind::box_geomean, {40, 40}));
    const auto b = nme(pred, truth, NormalizationSpec::with_box(NormalizationKind::box_geomean, {80, 80}));
    EXPECT_NEAR(a, 2 * b, 1e-12);
}

TEST(Nme, InterocularNotAboveInterpupilWhenDistanceLarger)
{
    // Corners at 0 and 3 lie outside the pupils at 1 and 2, so d_io >= d_ip.
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Point2> t{{0, 50}, {30, 50}, {70, 50}, {100, 50}};
        for (auto& q : t)
            q.y += rng.uniform(-1, 1);
        std::vector<Point2> p;
        for (const auto& q : t)
            p.push_back({q.x + rng.uniform(-3, 3), q.y + rng.uniform(-3, 3)});
        NormalizationSpec ip;
        ip.kind = NormalizationKind::interpupil;
        ip.left_pupil = {1};
        ip.right_pupil = {2};
        const auto truth = LandmarkSet::visible_points(t), pred = LandmarkSet::visible_points(p);
        ASSERT_GE(normalization_distance(truth, corners(0, 3)), normalization_distance(truth, ip));
        EXPECT_LE(nme(pred, truth, corners(0, 3)), nme(pred, truth, ip));
    }
}

TEST(Nme, Errors)
{
    const auto a = LandmarkSet::visible_points({{0, 0}, {1, 0}});
    EXPECT_THROW(nme(LandmarkSet::visible_points({{0, 0}}), a, corners(0, 1)), InvalidArgument);
    EXPECT_THROW(nme(a, LandmarkSet::visible_points({{0, 0}, {0, 0}}), corners(0, 1)), InvalidArgument);
    EXPECT_THROW(nme(a, a, NormalizationSpec{NormalizationKind::box_geomean}), InvalidArgument);
    EXPECT_THROW(nme(a, a, corners(0, 5)), InvalidArgument);
    EXPECT_THROW(parse_normalization("pupil"), InvalidArgument);
    EXPECT_EQ(parse_normalization("io"), NormalizationKind::interocular);
    EXPECT_EQ(parse_normalization("box"), NormalizationKind::box_geomean);
}

TEST(Curve, AllZeroIsConstantOne)
{
    const std::vector<double> n(5, 0.0);
    const auto c = cumulative_curve(n, 0.07, 101);
    for (double f : c.fraction)
        EXPECT_EQ(f, 1.0);
    EXPECT_EQ(auc(c), 1.0);
}

TEST(Curve, TwoPointEcdf)
{
    const std::vector<double> n{0.02, 0.06};
    const auto c = cumulative_curve(n, 0.08, 81);
    for (std::size_t k = 0; k < c.x.size(); ++k) {
        const double expected = c.x[k] < 0.02 ? 0.0 : (c.x[k] < 0.06 ? 0.5 : 1.0);
        EXPECT_EQ(c.fraction[k], expected) << c.x[k];
    }
}

TEST(Curve, TwoPointAucMatchesHandIntegral)
{
    const std::vector<double> n{0.02, 0.06};
    const auto c = cumulative_curve(n, 0.07);
    // Independent trapezoid over the same grid.
    double area = 0;
    auto ecdf = [](double x) { return (x >= 0.02 ? 0.5 : 0.0) + (x >= 0.06 ? 0.5 : 0.0); };
    for (std::size_t k = 1; k < c.x.size(); ++k)
        area += 0.5 * (ecdf(c.x[k]) + ecdf(c.x[k - 1])) * (c.x[k] - c.x[k - 1]);
    EXPECT_NEAR(auc(c), area / 0.07, 1e-12);
    // The step function integrates to 0.5 * 0.04 + 1 * 0.01 = 0.03; the trapezoid is within a step of it.
    EXPECT_NEAR(auc(c), 0.03 / 0.07, 0.07 / 1000 / 0.07);
}

TEST(Curve, UniformNmesGiveHalfArea)
{
    Rng rng(3);
    std::vector<double> n(10000);
    for (auto& v : n)
        v = rng.uniform(0, 0.07);
    EXPECT_NEAR(auc(cumulative_curve(n, 0.07)), 0.5, 0.02);
}

TEST(Curve, Errors)
{
    const std::vector<double> empty;
    const std::vector<double> one{0.1};
    EXPECT_THROW(cumulative_curve(empty), InvalidArgument);
    EXPECT_THROW(cumulative_curve(one, 0.0), InvalidArgument);
    EXPECT_THROW(cumulative_curve(one, 0.07, 1), InvalidArgument);
    EXPECT_THROW(failure_rate(empty), InvalidArgument);
}

TEST(FailureRate, HalfFail)
{
    const std::vector<double> n{0.05, 0.15};
    EXPECT_EQ(failure_rate(n, 0.1), 0.5);
    const std::vector<double> at{0.1};
    EXPECT_EQ(failure_rate(at, 0.1), 0.0);
}

TEST(FailureRate, EqualsOneMinusCurveAtGridThreshold)
{
    Rng rng(4);
    std::vector<double> n(500);
    for (auto& v : n)
        v = rng.uniform(0, 0.2);
    // Include values that land exactly on the grid point.
    n[0] = n[1] = 0.05;
    const auto c = cumulative_curve(n, 0.1, 11);
    for (std::size_t k = 0; k < c.x.size(); ++k)
        EXPECT_EQ(failure_rate(n, c.x[k]), 1.0 - c.fraction[k]) << c.x[k];
}

TEST(Evaluate, ReportFields)
{
    const auto r = evaluate({"a", "b"}, {0.05, 0.15}, 0.07, 0.1);
    EXPECT_DOUBLE_EQ(r.mean_nme, 0.1);
    EXPECT_EQ(r.failure_rate, 0.5);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("count"), 2);
    EXPECT_EQ(j.at("per_image")[1].at("name"), "b");
    EXPECT_EQ(j.at("auc_cutoff"), 0.07);
    const auto csv = curve_csv(r.curve);
    EXPECT_EQ(csv.rfind("x,fraction\n0,0\n", 0), 0u);
    EXPECT_THROW(evaluate({"a"}, {0.1, 0.2}), InvalidArgument);
}
