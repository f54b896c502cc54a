#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "rht/check/model_gradcheck.hpp"
#include "rht/core/parallel.hpp"
#include "rht/pipeline.hpp"
#include "support/golden.hpp"
#include "support/oracles.hpp"

using namespace rht;

namespace {

ModelConfig small_config(std::uint64_t seed = 1)
{
    auto c = ModelConfig::quarter();
    c.landmarks = 5;
    c.boundaries = 2;
    c.seed = seed;
    return c;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST(Config, DefaultsAndDerivedSizes)
{
    const auto q = ModelConfig::quarter();
    EXPECT_EQ(q.landmarks, 68u);
    EXPECT_EQ(q.boundaries, 13u);
    EXPECT_EQ(q.lambda, 0.1);
    EXPECT_EQ(q.sigma, 1.5);
    EXPECT_EQ(q.heatmap_channels(), 81u);
    EXPECT_EQ(q.image_size(), 32u);
    EXPECT_EQ(ModelConfig::full().image_size(), 128u);
    EXPECT_NO_THROW(ModelConfig::full().validate());
}

TEST(Config, ValidateRejectsBadValues)
{
    auto c = ModelConfig::quarter();
    c.sigma = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig::quarter();
    c.patch_size = 2;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig::quarter();
    c.lambda = -1;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = ModelConfig::quarter();
    c.localization.input_size = 6;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Config, JsonRoundTrip)
{
    auto c = ModelConfig::full();
    c.landmarks = 29;
    c.boundaries = 4;
    c.lambda = 0.25;
    c.seed = 77;
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(back.table, c.table);
    EXPECT_EQ(back.table_name, "full");
    EXPECT_EQ(back.landmarks, 29u);
    EXPECT_EQ(back.lambda, 0.25);
    EXPECT_EQ(back.seed, 77u);
    EXPECT_EQ(back.localization.input_size, c.localization.input_size);
    EXPECT_THROW(config_from_json({{"scale_table", "half"}}), InvalidArgument);
    EXPECT_THROW(config_from_json({{"landmarks", "many"}}), FormatError);
}

TEST(Model, BoundariesFollowConfig)
{
    EXPECT_EQ(boundaries_for(ModelConfig::quarter()).size(), 13u);
    const auto b = boundaries_for(small_config());
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b.boundaries[1], (std::vector<std::size_t>{1, 2}));
}

TEST(Forward, QuarterScaleShapes)
{
    const auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 3);
    const auto it = forward(model, s);
    const auto table = ScaleTable::quarter();
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(it.scales[k].fe.grid(), (GridSize{table.scales[k].size, table.scales[k].size}));
        EXPECT_EQ(it.scales[k].fs.channels(), table.scales[k].channels);
        EXPECT_EQ(it.scales[k].art.D.size(), table.scales[k].size * table.scales[k].size);
    }
    EXPECT_EQ(shape_string(it.output.data), "32x32x7");
    std::size_t total = 0;
    for (auto n : it.attention_histogram)
        total += n;
    EXPECT_EQ(total, 8u * 8 + 16 * 16 + 32 * 32);
    for (double v : it.output.data.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(Forward, SelfReferenceIdentity)
{
    const auto model = make_model(ModelConfig::quarter());
    const auto s = make_synthetic_sample(model, 1);
    const auto it = forward(model, s.target_image, s.target_image, s.target_heatmaps.data);
    for (const auto& sc : it.scales) {
        for (std::size_t i = 0; i < sc.art.D.size(); ++i) {
            ASSERT_EQ(sc.art.D[i], i);
            ASSERT_NEAR(sc.art.A[i], 1.0, 1e-6);
        }
        EXPECT_EQ(sc.theta, AffineMatrix<double>::identity());
        EXPECT_LE(max_abs_diff(sc.fs.values(), sc.fv.values()), 1e-6);
        EXPECT_LE(max_abs_diff(sc.fe.values(), sc.fv.values()), 1e-12);
    }
    EXPECT_NEAR(consistency_term(it), 0.0, 1e-9);
}

TEST(Forward, RejectsWrongInputShapes)
{
    const auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 1);
    EXPECT_THROW(forward(model, Volume<double>(16, 16, 3), s.reference_image, s.reference_heatmaps.data), ShapeError);
    EXPECT_THROW(forward(model, s.target_image, s.reference_image, Volume<double>(32, 32, 6)), ShapeError);
}

TEST(Forward, FrozenArtifactsReproduceForward)
{
    const auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 2);
    const auto a = forward(model, s);
    const auto frozen = artifacts_of(a);
    ForwardOptions o;
    o.frozen_artifacts = &frozen;
    const auto b = forward(model, s, o);
    EXPECT_EQ(a.output.data, b.output.data);
}

TEST(Forward, IndependentOfWorkerCount)
{
    const auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 4);
    set_worker_count(1);
    const auto a = forward(model, s);
    set_worker_count(3);
    const auto b = forward(model, s);
    set_worker_count(0);
    EXPECT_EQ(a.output.data, b.output.data);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(a.scales[k].art.D, b.scales[k].art.D);
        EXPECT_EQ(a.scales[k].art.A, b.scales[k].art.A);
    }
}

TEST(Forward, GoldenQuarterDigest)
{
    auto cfg = ModelConfig::quarter();
    cfg.seed = 42;
    const auto model = make_model(cfg);
    const auto s = make_synthetic_sample(model, 42);
    const auto d = oracle::digest(forward(model, s).output.data.values());
    EXPECT_NEAR(d.sum, golden::forward_quarter.sum, 1e-7);
    EXPECT_NEAR(d.sum_sq, golden::forward_quarter.sum_sq, 1e-7);
    EXPECT_NEAR(d.weighted, golden::forward_quarter.weighted, 1e-5);
}

TEST(Loss, ReportMatchesTerms)
{
    const auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 5);
    const auto it = forward(model, s);
    const auto r = evaluate_loss(model, it, s.target_heatmaps, s.target_landmarks.visibility);
    EXPECT_EQ(r.l1, heatmap_loss(it.output, s.target_heatmaps, s.target_landmarks.visibility));
    EXPECT_EQ(r.l2, consistency_term(it));
    EXPECT_EQ(r.overall, r.l1 + 0.1 * r.l2);
}

TEST(Loss, DifferenceMatchesDirectSubtraction)
{
    auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 6);
    const auto& vis = s.target_landmarks.visibility;
    const auto a = forward(model, s);
    model.params.fusion.projection.bias.data[0] += 0.01;
    const auto b = forward(model, s);
    const double direct = evaluate_loss(model, a, s.target_heatmaps, vis).overall -
                          evaluate_loss(model, b, s.target_heatmaps, vis).overall;
    EXPECT_NEAR(loss_difference(model, a, b, s.target_heatmaps, vis), direct, 1e-10);
}

TEST(Backward, ConsistencyGradientIsLinearInLambda)
{
    auto grads_at = [](double lambda) {
        auto cfg = small_config();
        cfg.lambda = lambda;
        const auto model = make_model(cfg);
        const auto s = make_synthetic_sample(model, 7);
        return backward(model, forward(model, s), s.target_heatmaps, s.target_landmarks.visibility);
    };
    const auto g0 = grads_at(0.0), g1 = grads_at(0.1), g2 = grads_at(0.2);
    const auto t0 = tensor_list(g0), t1 = tensor_list(g1), t2 = tensor_list(g2);
    bool consistency_reaches_v = false;
    for (std::size_t i = 0; i < t0.size(); ++i)
        for (std::size_t k = 0; k < t0[i].second->size(); ++k) {
            const double a = t0[i].second->data[k], b = t1[i].second->data[k], c = t2[i].second->data[k];
            EXPECT_NEAR(c - a, 2 * (b - a), 1e-12 + 1e-9 * std::abs(c)) << t0[i].first;
            consistency_reaches_v = consistency_reaches_v || (t0[i].first.starts_with("v.") && b != a);
        }
    EXPECT_TRUE(consistency_reaches_v);
}

TEST(Backward, MatchesFiniteDifferences)
{
    auto model = make_model(small_config(3));
    check::move_to_generic_point(model, 125);
    const auto s = make_synthetic_sample(model, 13);
    const auto results = check::check_model_gradients(model, s);
    ASSERT_FALSE(results.empty());
    for (const auto& r : results)
        EXPECT_TRUE(r.pass()) << check::describe(r);
}

TEST(Backward, HarnessDetectsTampering)
{
    auto model = make_model(small_config(3));
    check::move_to_generic_point(model, 125);
    const auto s = make_synthetic_sample(model, 13);
    check::ModelGradCheckOptions o;
    o.prefix = "fusion.projection";
    const auto results = check::check_model_gradients(
        model, s, o, [](Model& m) { m.params.fusion.projection.kernel.data[0] += 0.05; });
    bool any_fail = false;
    for (const auto& r : results)
        any_fail = any_fail || !r.pass();
    EXPECT_TRUE(any_fail);
}

TEST(Training, ZeroGradientStepIsFixpoint)
{
    auto model = make_model(small_config());
    const auto before = model.params;
    sgd_step(model.params, model.params.zeros_like(), 0.5);
    const auto a = tensor_list(before);
    const auto b = tensor_list(std::as_const(model.params));
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(a[i].second->data, b[i].second->data) << a[i].first;
    EXPECT_THROW(sgd_step(model.params, model.params.zeros_like(), NAN), InvalidArgument);
}

TEST(Training, ZeroLearningRateKeepsLossConstant)
{
    auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 8);
    const auto r = overfit_single(model, s, 3, 0.0);
    ASSERT_EQ(r.trace.size(), 4u);
    for (double v : r.trace)
        EXPECT_EQ(v, r.trace.front());
}

TEST(Training, OverfitIsDeterministicAndDescends)
{
    auto run = [] {
        auto model = make_model(small_config(2));
        const auto s = make_synthetic_sample(model, 9);
        return overfit_single(model, s, 10);
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_FALSE(a.diverged);
    EXPECT_EQ(a.steps_run, 10u);
    EXPECT_LT(a.trace.back(), a.trace.front());
}

TEST(Training, LargeStepDiverges)
{
    auto model = make_model(small_config());
    const auto s = make_synthetic_sample(model, 10);
    const auto r = overfit_single(model, s, 5, 10.0);
    EXPECT_TRUE(r.diverged);
    EXPECT_LT(r.steps_run, 5u);
}

TEST(Params, SaveLoadRoundTrip)
{
    const auto dir = std::filesystem::temp_directory_path() / "rht_test_params";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto a = make_model(small_config(1));
    auto b = make_model(small_config(2));
    save_params(dir / "p.bin", a.params);
    load_params(dir / "p.bin", b.params);
    const auto ta = tensor_list(a.params);
    const auto tb = tensor_list(std::as_const(b.params));
    ASSERT_EQ(ta.size(), tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i)
        EXPECT_EQ(ta[i].second->data, tb[i].second->data) << ta[i].first;

    auto other = make_model(ModelConfig::quarter());
    EXPECT_THROW(load_params(dir / "p.bin", other.params), ShapeError);
}
