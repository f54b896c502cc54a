#include <cmath>

#include <gtest/gtest.h>

#include "rht/losses.hpp"
#include "support/oracles.hpp"

using namespace rht;

namespace {

HeatmapStack<double> stack(Volume<double> v, std::size_t m, std::size_t p) { return {std::move(v), m, p, 1.5}; }

} // namespace

TEST(HeatmapLoss, ZeroWhenPredictionEqualsTruth)
{
    Rng rng(1);
    const auto t = stack(oracle::random_volume(6, 6, 5, rng, 0, 1), 3, 2);
    EXPECT_EQ(heatmap_loss(t, t, {1, 1, 1}), 0.0);
}

TEST(HeatmapLoss, SinglePixelDifference)
{
    auto pred = stack(Volume<double>(2, 2, 1), 1, 0);
    const auto truth = stack(Volume<double>(2, 2, 1), 1, 0);
    pred.data(1, 0, 0) = 0.5;
    EXPECT_EQ(heatmap_loss(pred, truth, {1}), 0.25);
}

TEST(HeatmapLoss, MatchesPerChannelFormula)
{
    Rng rng(2);
    const auto pred = stack(oracle::random_volume(4, 5, 5, rng, 0, 1), 3, 2);
    const auto truth = stack(oracle::random_volume(4, 5, 5, rng, 0, 1), 3, 2);
    const std::vector<std::uint8_t> vis{1, 0, 1};
    std::array<double, 5> ss{};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            for (std::size_t c = 0; c < 5; ++c)
                ss[c] += std::pow(pred.data(y, x, c) - truth.data(y, x, c), 2);
    const double expected = (ss[0] + ss[2]) / 3 + (ss[3] + ss[4]) / 2;
    EXPECT_NEAR(heatmap_loss(pred, truth, vis), expected, 1e-14);
}

TEST(HeatmapLoss, InvisibleLandmarkIsMasked)
{
    Rng rng(3);
    auto pred = stack(oracle::random_volume(4, 4, 2, rng, 0, 1), 2, 0);
    const auto truth = stack(oracle::random_volume(4, 4, 2, rng, 0, 1), 2, 0);
    const double before = heatmap_loss(pred, truth, {1, 0});
    for (std::size_t i = 0; i < pred.data.pixels(); ++i)
        pred.data.pixel(i)[1] += 10.0;
    EXPECT_EQ(heatmap_loss(pred, truth, {1, 0}), before);
}

TEST(HeatmapLoss, BatchIsMeanOfImages)
{
    Rng rng(4);
    std::vector<HeatmapStack<double>> p, t;
    std::vector<std::vector<std::uint8_t>> v;
    double sum = 0;
    for (int n = 0; n < 3; ++n) {
        p.push_back(stack(oracle::random_volume(3, 3, 3, rng, 0, 1), 2, 1));
        t.push_back(stack(oracle::random_volume(3, 3, 3, rng, 0, 1), 2, 1));
        v.push_back({1, 1});
        sum += heatmap_loss(p.back(), t.back(), v.back());
    }
    EXPECT_NEAR(heatmap_loss<double>(p, t, v), sum / 3, 1e-15);
}

TEST(HeatmapLoss, RejectsMismatches)
{
    const auto a = stack(Volume<double>(4, 4, 3), 2, 1);
    EXPECT_THROW(heatmap_loss(a, stack(Volume<double>(4, 5, 3), 2, 1), {1, 1}), ShapeError);
    EXPECT_THROW(heatmap_loss(a, stack(Volume<double>(4, 4, 3), 1, 2), {1, 1}), ShapeError);
    EXPECT_THROW(heatmap_loss(a, a, {1}), ShapeError);
    EXPECT_THROW(heatmap_loss(a, a, {1, 2}), InvalidArgument);
}

TEST(HeatmapLoss, GradientMatchesFiniteDifferences)
{
    Rng rng(5);
    auto pred = stack(oracle::random_volume(3, 4, 4, rng, 0, 1), 3, 1);
    const auto truth = stack(oracle::random_volume(3, 4, 4, rng, 0, 1), 3, 1);
    const std::vector<std::uint8_t> vis{1, 0, 1};
    const auto g = heatmap_loss_gradient(pred, truth, vis);
    EXPECT_LT(oracle::max_gradient_error(pred.data.values(), g.values(), [&] { return heatmap_loss(pred, truth, vis); }),
              1e-6);
}

TEST(ConsistencyLoss, HandExample)
{
    Volume<double> fe(1, 2, 1), fs(1, 2, 1);
    fe(0, 0, 0) = 1;
    fe(0, 1, 0) = 2;
    fs(0, 0, 0) = 0;
    fs(0, 1, 0) = 0.5;
    const std::vector<double> a{0.5, 0.5};
    // |1 * 0.5 - 0| + |2 * 0.5 - 0.5| = 1, mean 0.5.
    EXPECT_DOUBLE_EQ(consistency_loss<double>(fe, fs, a), 0.5);
    const std::vector<double> one{1.0, 0.5};
    // |1 * 1 - 0| + |2 * 0.5 - 0.5| = 1.5, mean 0.75.
    EXPECT_DOUBLE_EQ(consistency_loss<double>(fe, fs, one), 0.75);
}

TEST(ConsistencyLoss, MatchesOracle)
{
    Rng rng(6);
    const auto fe = oracle::random_volume(4, 4, 2, rng), fs = oracle::random_volume(4, 4, 2, rng);
    std::vector<double> a(16);
    for (auto& x : a)
        x = rng.uniform(-1, 1);
    EXPECT_NEAR(consistency_loss<double>(fe, fs, a), oracle::mean_abs_consistency(fe, fs, a), 1e-12);
}

TEST(ConsistencyLoss, ZeroWhenSoftTransferEqualsWeightedHard)
{
    Rng rng(7);
    const auto fe = oracle::random_volume(3, 3, 2, rng);
    std::vector<double> a(9);
    for (auto& x : a)
        x = rng.uniform(0, 1);
    Volume<double> fs = fe;
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t c = 0; c < 2; ++c)
            fs.pixel(i)[c] *= a[i];
    EXPECT_EQ(consistency_loss<double>(fe, fs, a), 0.0);
}

TEST(ConsistencyLoss, GradientMatchesFiniteDifferencesAwayFromKink)
{
    Rng rng(8);
    auto fe = oracle::random_volume(3, 4, 3, rng);
    std::vector<double> a(12);
    for (auto& x : a)
        x = rng.uniform(0.2, 1);
    // Residuals of magnitude at least 0.1 keep every coordinate off the kink.
    Volume<double> fs = fe;
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            fs.pixel(i)[c] = fe.pixel(i)[c] * a[i] + (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.1, 0.5);
    const auto g = consistency_loss_gradient<double>(fe, fs, a);
    auto loss = [&] { return consistency_loss<double>(fe, fs, a); };
    EXPECT_LT(oracle::max_gradient_error(fe.values(), g.fe.values(), loss), 1e-6);
    EXPECT_LT(oracle::max_gradient_error(fs.values(), g.fs.values(), loss), 1e-6);
}

TEST(ConsistencyLoss, RejectsMismatches)
{
    const std::vector<double> a(4, 1.0);
    EXPECT_THROW(consistency_loss<double>(Volume<double>(2, 2, 1), Volume<double>(2, 2, 2), a), ShapeError);
    EXPECT_THROW(consistency_loss<double>(Volume<double>(2, 3, 1), Volume<double>(2, 3, 1), a), ShapeError);
}

TEST(OverallLoss, DefaultWeight)
{
    const auto r = overall_loss(1.0, 2.0);
    EXPECT_EQ(r.lambda, 0.1);
    EXPECT_DOUBLE_EQ(r.overall, 1.2);
    EXPECT_EQ(overall_loss(0.7, 5.0, 0.0).overall, 0.7);
}

TEST(OverallLoss, BitExactComposition)
{
    Rng rng(9);
    for (int t = 0; t < 1000; ++t) {
        const double l1 = rng.uniform(0, 10), l2 = rng.uniform(0, 10);
        EXPECT_EQ(overall_loss(l1, l2).overall, l1 + 0.1 * l2);
    }
}

TEST(OverallLoss, RejectsNegativeTermsAndWeight)
{
    EXPECT_THROW(overall_loss(-1e-9, 1), InvalidArgument);
    EXPECT_THROW(overall_loss(1, -1), InvalidArgument);
    EXPECT_THROW(overall_loss(1, 1, -0.1), InvalidArgument);
    EXPECT_THROW(overall_loss(1, 1, NAN), InvalidArgument);
}

TEST(OverallLoss, JsonRoundTrip)
{
    const auto r = overall_loss(0.123456789012345, 3.5, 0.25);
    const nlohmann::json j = r;
    const auto back = j.get<LossReport>();
    EXPECT_EQ(back.l1, r.l1);
    EXPECT_EQ(back.l2, r.l2);
    EXPECT_EQ(back.overall, r.overall);
    EXPECT_EQ(back.lambda, r.lambda);
}
