#pragma once

// Invariant battery behind `rht selfcheck`: oracle equivalences, identities, round trips and
// gradient checks at quarter scale. Every item reports PASS/FAIL with a one-line detail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rht/check/gradcheck.hpp"
#include "rht/check/model_gradcheck.hpp"
#include "rht/check/reference.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/random.hpp"
#include "rht/dataio/pts.hpp"
#include "rht/fusion.hpp"
#include "rht/heatmaps.hpp"
#include "rht/htm.hpp"
#include "rht/io/rhm1.hpp"
#include "rht/losses.hpp"
#include "rht/metrics.hpp"
#include "rht/nn/layers.hpp"
#include "rht/pipeline.hpp"
#include "rht/stm.hpp"

namespace rht::check {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct CheckItem {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;
};

/// Runs f, timing it; exceptions become failures.
inline CheckItem run_check(const std::string& name, const std::function<Outcome()>& f)
{
    CheckItem item;
    item.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto o = f();
        item.pass = o.pass;
        item.detail = std::move(o.detail);
    } catch (const std::exception& e) {
        item.pass = false;
        item.detail = std::string("exception: ") + e.what();
    }
    item.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return item;
}

namespace detail {

inline std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

inline Volume<double> random_volume(std::size_t h, std::size_t w, std::size_t c, Rng& rng, double lo = -1, double hi = 1)
{
    Volume<double> v(h, w, c);
    for (auto& x : v.values())
        x = rng.uniform(lo, hi);
    return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = a.size() == b.size() ? 0.0 : std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Outcome summarize(const std::vector<GradCheckResult>& results)
{
    Outcome o{true, {}};
    std::size_t checked = 0, floor = 0;
    double worst = 0;
    const GradCheckResult* bad = nullptr;
    for (const auto& r : results) {
        checked += r.checked;
        floor += r.floor_passes;
        worst = std::max(worst, r.max_rel_error);
        if (!r.pass()) {
            o.pass = false;
            if (!bad)
                bad = &r;
        }
    }
    o.detail = fmt("%zu tensors, %zu entries (%zu within round-off floor), max rel %.2e", results.size(),
                   checked, floor, worst);
    if (bad)
        o.detail += "; first failure " + describe(*bad);
    return o;
}

/// Smooth field for the warp composition check; bilinear error scales with its curvature.
inline Volume<double> smooth_volume(std::size_t size, std::size_t channels)
{
    Volume<double> v(size, size, channels);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                const double fx = static_cast<double>(x), fy = static_cast<double>(y), fc = static_cast<double>(c);
                v(y, x, c) = std::sin(0.11 * fx + 0.07 * fy + fc) + 0.5 * std::cos(0.09 * fy - 0.05 * fx);
            }
    return v;
}

} // namespace detail

// ---------------------------------------------------------------------------------------------
// Battery items

/// Optimized correlation against the triple loop on random instances up to 12x12x4, k in {1, 3}.
inline Outcome correlation_oracle(std::size_t instances = 100, std::uint64_t seed = 1)
{
    Rng rng(seed);
    double worst = 0;
    std::size_t index_mismatch = 0;
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t h = 1 + rng.index(12), w = 1 + rng.index(12), c = 1 + rng.index(4);
        const std::size_t k = n % 2 == 0 ? 1 : 3;
        // Every fifth instance uses a different reference extent to exercise rectangular C.
        const std::size_t hr = n % 5 == 0 ? 1 + rng.index(12) : h, wr = n % 5 == 0 ? 1 + rng.index(12) : w;
        const auto q = l2_normalize(unfold(detail::random_volume(h, w, c, rng), k));
        const auto r = l2_normalize(unfold(detail::random_volume(hr, wr, c, rng), k));
        const auto fast = correlate(q, r);
        const auto lean = correlate_argmax(q, r);
        const auto slow = reference::correlate(q, r);
        worst = std::max({worst, detail::max_abs_diff(fast.C, slow.C), detail::max_abs_diff(fast.A, slow.A),
                          detail::max_abs_diff(lean.A, slow.A)});
        index_mismatch += fast.D != slow.D;
        index_mismatch += lean.D != slow.D;
    }
    return {worst <= 1e-6 && index_mismatch == 0,
            detail::fmt("%zu instances, max |diff| %.2e, %zu index mismatches", instances, worst, index_mismatch)};
}

/// Reference = target at quarter scale: D identity, A = 1, Theta identity, F_S = F_E = F_V, L2 = 0.
inline Outcome self_reference_identity(std::uint64_t seed = 1)
{
    auto model = make_model(ModelConfig::quarter());
    const auto s = make_synthetic_sample(model, seed);
    const auto it = forward(model, s.target_image, s.target_image, s.target_heatmaps.data);
    std::size_t d_mismatch = 0;
    double a_err = 0, fs_err = 0, fe_err = 0, theta_err = 0;
    for (const auto& sc : it.scales) {
        for (std::size_t i = 0; i < sc.art.D.size(); ++i) {
            d_mismatch += sc.art.D[i] != i;
            a_err = std::max(a_err, std::abs(sc.art.A[i] - 1.0));
        }
        fs_err = std::max(fs_err, detail::max_abs_diff(sc.fs.values(), sc.fv.values()));
        fe_err = std::max(fe_err, detail::max_abs_diff(sc.fe.values(), sc.fv.values()));
        const auto id = AffineMatrix<double>::identity();
        for (std::size_t k = 0; k < 6; ++k)
            theta_err = std::max(theta_err, std::abs(sc.theta.theta[k] - id.theta[k]));
    }
    const double l2 = consistency_term(it);
    const bool pass = d_mismatch == 0 && a_err <= 1e-6 && fs_err <= 1e-6 && fe_err <= 1e-6 && theta_err == 0 &&
                      std::abs(l2) <= 1e-9;
    return {pass, detail::fmt("D mismatches %zu, max|A-1| %.1e, max|F_S-F_V| %.1e, max|F_E-F_V| %.1e, L2 %.1e",
                              d_mismatch, a_err, fs_err, fe_err, l2)};
}

/// Identity warp is exact; zoom by s then 1/s restores the interior of a smooth field.
inline Outcome affine_identity_and_composition(std::uint64_t seed = 1)
{
    Rng rng(seed);
    const auto noise = detail::random_volume(17, 13, 3, rng);
    const double id_err =
        detail::max_abs_diff(affine_warp(noise, AffineMatrix<double>::identity()).values(), noise.values());

    const std::size_t size = 32;
    const auto field = detail::smooth_volume(size, 2);
    double comp_err = 0;
    for (double s : {0.8, 0.9, 1.1, 1.25}) {
        const auto once = affine_warp(field, AffineMatrix<double>::scaling(s, s));
        const auto back = affine_warp(once, AffineMatrix<double>::scaling(1 / s, 1 / s));
        // A zoom-in (s < 1) discards content beyond |u| > s in normalized units; compare only the
        // region that survives both warps, shrunk by a 2 px band.
        const double half = static_cast<double>(size - 1) / 2;
        const double radius = std::min(1.0, s) * half - 2.0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                if (std::abs(static_cast<double>(x) - half) > radius || std::abs(static_cast<double>(y) - half) > radius)
                    continue;
                for (std::size_t c = 0; c < field.channels(); ++c)
                    comp_err = std::max(comp_err, std::abs(back(y, x, c) - field(y, x, c)));
            }
    }
    return {id_err <= 1e-12 && comp_err <= 1e-2,
            detail::fmt("identity max|diff| %.1e, composition max|diff| %.2e", id_err, comp_err)};
}

// ---------------------------------------------------------------------------------------------
// Kernel gradient checks: loss = sum(w * out) with a fixed random projection w.

struct KernelCheck {
    std::string name;
    std::function<std::vector<GradCheckResult>(Rng&, const GradCheckOptions&)> run;
};

namespace detail {

template <class Forward>
double projected(const Forward& f, const Volume<double>& w)
{
    return dot(f(), w);
}

} // namespace detail

inline std::vector<KernelCheck> kernel_checks()
{
    std::vector<KernelCheck> out;

    out.push_back({"extractor convs", [](Rng& rng, const GradCheckOptions& o) {
                       std::vector<GradCheckResult> res;
                       for (auto tag : all_scales) {
                           auto w = make_extractor<double>(3, 4, rng);
                           for (auto& st : w.stages)
                               for (std::size_t c = 0; c < st.scale.size(); ++c) {
                                   st.scale.data[c] = rng.uniform(0.5, 1.5);
                                   st.shift.data[c] = rng.uniform(-0.1, 0.1);
                               }
                           auto img = detail::random_volume(8, 8, 3, rng, 0, 1);
                           ExtractorTrace<double> tr;
                           const auto y = extract_local_features(img, w, tag, &tr);
                           const auto proj = random_projection(y.height(), y.width(), y.channels(), rng);
                           ExtractorWeights<double> g = w;
                           g.for_each_tensor("", [](const std::string&, Tensor<double>& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
                           const auto g_img = extractor_backward(tr, w, proj, g, true);
                           auto loss = [&] { return dot(extract_local_features(img, w, tag), proj); };
                           for (std::size_t s = 0; s < 3; ++s) {
                               const auto p = "extractor." + to_string(tag) + ".stage" + std::to_string(s);
                               res.push_back(gradcheck(p + ".kernel", w.stages[s].kernel.data, g.stages[s].kernel.data, loss, o));
                               res.push_back(gradcheck(p + ".bias", w.stages[s].bias.data, g.stages[s].bias.data, loss, o));
                               res.push_back(gradcheck(p + ".scale", w.stages[s].scale.data, g.stages[s].scale.data, loss, o));
                               res.push_back(gradcheck(p + ".shift", w.stages[s].shift.data, g.stages[s].shift.data, loss, o));
                           }
                           res.push_back(gradcheck("extractor." + to_string(tag) + ".input", img.values(), g_img.values(), loss, o));
                       }
                       return res;
                   }});

    out.push_back({"bilinear sampling", [](Rng& rng, const GradCheckOptions& o) {
                       // Theta keeps every sample point away from integer coordinates.
                       auto values = detail::random_volume(9, 9, 3, rng);
                       AffineMatrix<double> theta;
                       theta.theta = {0.83, 0.04, 0.0625, -0.03, 0.91, -0.0625};
                       const auto grid = affine_grid(theta, {7, 7}, values.grid());
                       const auto proj = random_projection(7, 7, 3, rng);
                       const auto g = bilinear_sample_backward(values, grid, proj);
                       const auto g_theta = affine_grid_backward<double>(grid, g.grid_x, g.grid_y);
                       auto loss = [&] { return dot(bilinear_sample(values, affine_grid(theta, {7, 7}, values.grid())), proj); };
                       return std::vector<GradCheckResult>{
                           gradcheck("bilinear.values", values.values(), g.values.values(), loss, o),
                           gradcheck("bilinear.theta", theta.theta, g_theta.theta, loss, o)};
                   }});

    out.push_back({"soft transfer", [](Rng& rng, const GradCheckOptions& o) {
                       auto values = detail::random_volume(5, 5, 3, rng);
                       CorrelationArtifacts<double> art;
                       art.rows = art.cols = 25;
                       for (std::size_t i = 0; i < 25; ++i) {
                           art.D.push_back(rng.index(25));
                           art.A.push_back(rng.uniform(-1, 1));
                       }
                       const auto proj = random_projection(5, 5, 3, rng);
                       const auto g = soft_transfer_backward(values.grid(), art, proj);
                       auto loss = [&] { return dot(soft_transfer(values, art), proj); };
                       return std::vector<GradCheckResult>{gradcheck("soft_transfer.values", values.values(), g.values(), loss, o)};
                   }});

    out.push_back({"localization head", [](Rng& rng, const GradCheckOptions& o) {
                       auto w = make_localization<double>(6, {8, 4, 4, 8}, rng);
                       for (auto& x : w.fc1_weight.data)
                           x = rng.uniform(-0.3, 0.3);
                       for (auto* b : {&w.conv0_bias, &w.conv1_bias, &w.fc0_bias})
                           for (auto& x : b->data)
                               x = rng.uniform(-0.05, 0.05);
                       auto a = detail::random_volume(16, 16, 3, rng), b = detail::random_volume(16, 16, 3, rng);
                       std::array<double, 6> proj{};
                       for (auto& p : proj)
                           p = rng.uniform(-1, 1);
                       auto loss = [&] {
                           const auto t = estimate_affine(a, b, w);
                           double s = 0;
                           for (std::size_t k = 0; k < 6; ++k)
                               s += proj[k] * t.theta[k];
                           return s;
                       };
                       LocalizationTrace<double> tr;
                       estimate_affine(a, b, w, &tr);
                       LocalizationWeights<double> g = w;
                       g.for_each_tensor("", [](const std::string&, Tensor<double>& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
                       AffineMatrix<double> gt;
                       gt.theta = proj;
                       auto [ga, gb] = localization_backward(tr, w, gt, g, 3);
                       std::vector<GradCheckResult> res;
                       std::vector<std::pair<std::string, Tensor<double>*>> wl, gl;
                       w.for_each_tensor("loc", [&](const std::string& n, Tensor<double>& t) { wl.emplace_back(n, &t); });
                       g.for_each_tensor("loc", [&](const std::string& n, Tensor<double>& t) { gl.emplace_back(n, &t); });
                       for (std::size_t i = 0; i < wl.size(); ++i)
                           res.push_back(gradcheck(wl[i].first, wl[i].second->data, gl[i].second->data, loss, o));
                       res.push_back(gradcheck("loc.target", a.values(), ga.values(), loss, o));
                       res.push_back(gradcheck("loc.reference", b.values(), gb.values(), loss, o));
                       return res;
                   }});

    out.push_back({"FF block", [](Rng& rng, const GradCheckOptions& o) {
                       auto fe = detail::random_volume(6, 6, 2, rng), fs = detail::random_volume(6, 6, 2, rng), fg = detail::random_volume(6, 6, 3, rng);
                       ConvLayer<double> w{nn::conv_kernel<double>(3, 7, 3, rng), Tensor<double>({3})};
                       for (auto& b : w.bias.data)
                           b = rng.uniform(-0.5, 0.5);
                       const auto proj = random_projection(6, 6, 3, rng);
                       Volume<double> cat;
                       ff_block(fe, fs, fg, w, &cat);
                       ConvLayer<double> g{Tensor<double>(w.kernel.shape), Tensor<double>({3})};
                       const auto gi = ff_block_backward(cat, 2, 2, w, proj, g);
                       auto loss = [&] { return dot(ff_block(fe, fs, fg, w), proj); };
                       return std::vector<GradCheckResult>{
                           gradcheck("ff.kernel", w.kernel.data, g.kernel.data, loss, o),
                           gradcheck("ff.bias", w.bias.data, g.bias.data, loss, o),
                           gradcheck("ff.fe", fe.values(), gi.fe.values(), loss, o),
                           gradcheck("ff.fs", fs.values(), gi.fs.values(), loss, o),
                           gradcheck("ff.fg", fg.values(), gi.fg.values(), loss, o)};
                   }});

    out.push_back({"transposed conv", [](Rng& rng, const GradCheckOptions& o) {
                       auto in = detail::random_volume(6, 6, 4, rng);
                       ConvLayer<double> w{nn::he_uniform<double>({4, 4, 4, 2}, 16, rng), Tensor<double>({2})};
                       for (auto& b : w.bias.data)
                           b = rng.uniform(-0.5, 0.5);
                       const auto proj = random_projection(12, 12, 2, rng);
                       ConvLayer<double> g{Tensor<double>(w.kernel.shape), Tensor<double>({2})};
                       const auto gi = upscale_backward(in, w, proj, g);
                       auto loss = [&] { return dot(upscale(in, w), proj); };
                       return std::vector<GradCheckResult>{gradcheck("upscale.kernel", w.kernel.data, g.kernel.data, loss, o),
                                                           gradcheck("upscale.bias", w.bias.data, g.bias.data, loss, o),
                                                           gradcheck("upscale.input", in.values(), gi.values(), loss, o)};
                   }});

    out.push_back({"projection", [](Rng& rng, const GradCheckOptions& o) {
                       auto in = detail::random_volume(6, 6, 4, rng);
                       ConvLayer<double> w{nn::conv_kernel<double>(1, 4, 3, rng), Tensor<double>({3})};
                       for (auto& b : w.bias.data)
                           b = rng.uniform(-0.5, 0.5);
                       const auto proj = random_projection(6, 6, 3, rng);
                       auto fwd = [&] { return nn::logistic(nn::conv2d(in, w.kernel, w.bias, {1, 0})); };
                       const auto y = fwd();
                       ConvLayer<double> g{Tensor<double>(w.kernel.shape), Tensor<double>({3})};
                       Volume<double> gi;
                       nn::conv2d_backward(in, w.kernel, {1, 0}, nn::logistic_backward(y, proj), &g.kernel, &g.bias, &gi);
                       auto loss = [&] { return dot(fwd(), proj); };
                       return std::vector<GradCheckResult>{gradcheck("projection.kernel", w.kernel.data, g.kernel.data, loss, o),
                                                           gradcheck("projection.bias", w.bias.data, g.bias.data, loss, o),
                                                           gradcheck("projection.input", in.values(), gi.values(), loss, o)};
                   }});

    out.push_back({"heatmap loss", [](Rng& rng, const GradCheckOptions& o) {
                       HeatmapStack<double> pred{detail::random_volume(6, 6, 5, rng, 0, 1), 3, 2, 1.5};
                       HeatmapStack<double> truth{detail::random_volume(6, 6, 5, rng, 0, 1), 3, 2, 1.5};
                       const std::vector<std::uint8_t> vis{1, 0, 1};
                       const auto g = heatmap_loss_gradient(pred, truth, vis);
                       auto loss = [&] { return heatmap_loss(pred, truth, vis); };
                       return std::vector<GradCheckResult>{gradcheck("heatmap_loss.pred", pred.data.values(), g.values(), loss, o)};
                   }});

    out.push_back({"consistency loss", [](Rng& rng, const GradCheckOptions& o) {
                       auto fe = detail::random_volume(4, 4, 2, rng), fs = detail::random_volume(4, 4, 2, rng);
                       std::vector<double> a(16);
                       for (auto& x : a)
                           x = rng.uniform(0.2, 1.0);
                       // Keep every residual at least 1e-3 away from the kink.
                       for (std::size_t i = 0; i < fe.size(); ++i) {
                           const double r = fe.values()[i] * a[i / 2] - fs.values()[i];
                           if (std::abs(r) < 1e-3)
                               fs.values()[i] -= r > 0 ? 1e-2 : -1e-2;
                       }
                       const auto g = consistency_loss_gradient<double>(fe, fs, a);
                       auto loss = [&] { return consistency_loss<double>(fe, fs, a); };
                       return std::vector<GradCheckResult>{gradcheck("consistency.fe", fe.values(), g.fe.values(), loss, o),
                                                           gradcheck("consistency.fs", fs.values(), g.fs.values(), loss, o)};
                   }});
    return out;
}

/// max_entries = 0 checks every entry of every tensor.
inline Outcome kernel_gradients(std::uint64_t seed = 1, std::size_t max_entries = 0, double abs_floor = 1e-8)
{
    Rng rng(seed);
    GradCheckOptions o;
    o.max_entries = max_entries;
    o.abs_floor = abs_floor;
    o.seed = seed;
    std::vector<GradCheckResult> all;
    for (const auto& k : kernel_checks()) {
        auto r = k.run(rng, o);
        all.insert(all.end(), r.begin(), r.end());
    }
    return detail::summarize(all);
}

/// Render then decode at sigma 1.5 for random sub-pixel placements.
inline Outcome render_decode_roundtrip(std::size_t placements = 200, std::uint64_t seed = 1)
{
    Rng rng(seed);
    double worst = 0;
    const GridSize grid{32, 32};
    for (std::size_t n = 0; n < placements; ++n) {
        const Point2 p{rng.uniform(1, 30), rng.uniform(1, 30)};
        const auto stack = render_landmark_heatmaps(LandmarkSet::visible_points({p}), grid, 1.5);
        const auto d = decode_heatmaps(stack);
        worst = std::max(worst, std::hypot(d.points[0].x - p.x, d.points[0].y - p.y));
    }
    return {worst <= 0.2, detail::fmt("%zu placements, max error %.2e px", placements, worst)};
}

inline Outcome metric_golden_values(std::uint64_t seed = 1)
{
    auto truth = LandmarkSet::visible_points({{0, 0}, {10, 0}});
    auto pred = LandmarkSet::visible_points({{3, 4}, {10, 0}});
    NormalizationSpec io;
    io.kind = NormalizationKind::interocular;
    io.left_corner = 0;
    io.right_corner = 1;
    const double n345 = nme(pred, truth, io);

    const std::vector<double> two{0.05, 0.15};
    const double fr = failure_rate(two, 0.1);

    const std::vector<double> zeros(10, 0.0);
    const double full = auc(cumulative_curve(zeros));

    Rng rng(seed);
    std::vector<double> uniform(10000);
    for (auto& v : uniform)
        v = rng.uniform(0, default_auc_cutoff);
    const double mc = auc(cumulative_curve(uniform));

    const bool pass = n345 == 0.25 && fr == 0.5 && full == 1.0 && std::abs(mc - 0.5) <= 0.02;
    return {pass, detail::fmt("NME %.17g, FR %.17g, AUC(const 1) %.17g, AUC(uniform) %.4f", n345, fr, full, mc)};
}

/// overall = l1 + 0.1 * l2 bit for bit, both directly and through the pipeline's loss report.
inline Outcome loss_composition(std::uint64_t seed = 1)
{
    Rng rng(seed);
    std::size_t mismatches = 0;
    for (int n = 0; n < 1000; ++n) {
        const double l1 = rng.uniform(0, 10), l2 = rng.uniform(0, 10);
        const auto r = overall_loss(l1, l2);
        const double expect = l1 + 0.1 * l2;
        mismatches += r.overall != expect || r.lambda != 0.1;
    }
    auto cfg = ModelConfig::quarter();
    cfg.landmarks = 5;
    cfg.boundaries = 2;
    const auto model = make_model(cfg);
    const auto s = make_synthetic_sample(model, seed);
    const auto rep = evaluate_loss(model, forward(model, s), s.target_heatmaps, s.target_landmarks.visibility);
    mismatches += rep.overall != rep.l1 + 0.1 * rep.l2;
    return {mismatches == 0 && default_lambda == 0.1,
            detail::fmt("%zu mismatches; pipeline l1 %.6g, l2 %.6g, overall %.6g", mismatches, rep.l1, rep.l2, rep.overall)};
}

/// 50 steps on one synthetic sample must halve the loss; a short rerun must match bit for bit.
inline Outcome overfit_smoke(std::uint64_t seed = 1, std::size_t steps = 50, std::size_t repeat_steps = 50)
{
    auto cfg = ModelConfig::quarter();
    cfg.seed = seed;
    auto model = make_model(cfg);
    const auto s = make_synthetic_sample(model, seed);
    const auto r = overfit_single(model, s, steps);
    auto again = make_model(cfg);
    const auto r2 = overfit_single(again, s, repeat_steps);
    bool same = true;
    for (std::size_t k = 0; k < std::min(r.trace.size(), r2.trace.size()); ++k)
        same = same && r.trace[k] == r2.trace[k];
    const double ratio = r.trace.back() / r.trace.front();
    return {!r.diverged && ratio < 0.5 && same,
            detail::fmt("initial %.6g, final %.6g, ratio %.3f, repeat %s", r.trace.front(), r.trace.back(), ratio,
                        same ? "identical" : "differs")};
}

/// Transformed features per scale match the table and the output is size x size x (M + P).
inline Outcome shape_contract(const ModelConfig& cfg, std::uint64_t seed = 1)
{
    const auto model = make_model(cfg);
    const auto s = make_synthetic_sample(model, seed);
    const auto it = forward(model, s);
    bool pass = true;
    std::string shapes;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& spec = cfg.table.scales[k];
        const auto& sc = it.scales[k];
        for (const auto* v : {&sc.fs, &sc.fe})
            pass = pass && v->height() == spec.size && v->width() == spec.size && v->channels() == spec.channels;
        shapes += shape_string(sc.fe) + ", ";
    }
    const std::size_t out = cfg.table.scales[2].size;
    pass = pass && it.output.data.height() == out && it.output.data.width() == out &&
           it.output.channels() == cfg.heatmap_channels();
    return {pass, "F_E/F_S " + shapes + "output " + shape_string(it.output.data)};
}

/// RHM1 and .pts write -> read -> write are byte-identical.
inline Outcome format_roundtrips(std::size_t instances = 50, std::uint64_t seed = 1)
{
    Rng rng(seed);
    std::size_t failures = 0;
    for (std::size_t n = 0; n < instances; ++n) {
        auto v = detail::random_volume(1 + rng.index(9), 1 + rng.index(9), 1 + rng.index(5), rng, -1e3, 1e3);
        if (n % 7 == 0) {
            v.values()[0] = -0.0;
            v.values()[v.size() - 1] = std::numeric_limits<double>::denorm_min();
        }
        const auto bytes = io::encode_rhm1(v);
        failures += io::encode_rhm1(io::decode_rhm1(bytes)) != bytes;

        const std::size_t m = 1 + rng.index(80);
        dataio::PtsAnnotation a{1, m, {}};
        for (std::size_t i = 0; i < m; ++i)
            a.points.push_back({rng.uniform(-10, 500), n % 3 == 0 ? std::round(rng.uniform(0, 500)) : rng.uniform(0, 500)});
        const auto text = dataio::write_pts(a);
        failures += dataio::write_pts(dataio::parse_pts(text)) != text;
    }
    return {failures == 0, detail::fmt("%zu RHM1 + %zu .pts instances, %zu failures", instances, instances, failures)};
}

/// Forward results do not depend on the worker count.
inline Outcome worker_independence(std::uint64_t seed = 1)
{
    auto cfg = ModelConfig::quarter();
    cfg.landmarks = 5;
    cfg.boundaries = 2;
    const auto model = make_model(cfg);
    const auto s = make_synthetic_sample(model, seed);
    set_worker_count(1);
    const auto a = forward(model, s);
    set_worker_count(3);
    const auto b = forward(model, s);
    set_worker_count(0);
    bool same = a.output.data == b.output.data;
    for (std::size_t k = 0; k < 3; ++k)
        same = same && a.scales[k].art.D == b.scales[k].art.D && a.scales[k].art.A == b.scales[k].art.A;
    return {same, same ? "1 and 3 workers agree bit for bit" : "outputs differ between 1 and 3 workers"};
}

inline Model gradient_check_model(std::uint64_t seed)
{
    auto cfg = ModelConfig::quarter();
    cfg.landmarks = 5;
    cfg.boundaries = 2;
    cfg.seed = seed;
    auto model = make_model(cfg);
    move_to_generic_point(model, seed + 122);
    return model;
}

/// Every trainable tensor of the quarter-scale model against central differences.
inline Outcome model_gradients(std::uint64_t seed = 1)
{
    auto model = gradient_check_model(seed);
    const auto s = make_synthetic_sample(model, seed + 10);
    return detail::summarize(check_model_gradients(model, s));
}

/// The harness must notice a fusion weight that changes between the analytic and numeric passes.
inline Outcome gradient_harness_sanity(std::uint64_t seed = 1)
{
    auto model = gradient_check_model(seed);
    const auto s = make_synthetic_sample(model, seed + 10);
    ModelGradCheckOptions o;
    o.prefix = "fusion.projection";
    const auto res = check_model_gradients(model, s, o, [](Model& m) { m.params.fusion.projection.kernel.data[0] += 0.05; });
    const auto summary = detail::summarize(res);
    return {!summary.pass, std::string(summary.pass ? "tampered weights went unnoticed: " : "tampering detected: ") +
                               summary.detail};
}

struct SelfCheckOptions {
    std::uint64_t seed = 1;
};

inline std::vector<std::pair<std::string, std::function<Outcome()>>> selfcheck_items(const SelfCheckOptions& o = {})
{
    const auto seed = o.seed;
    return {
        {"correlation oracle", [=] { return correlation_oracle(100, seed); }},
        {"self-reference identity", [=] { return self_reference_identity(seed); }},
        {"affine identity and composition", [=] { return affine_identity_and_composition(seed); }},
        {"kernel gradients", [=] { return kernel_gradients(seed, 64); }},
        {"render/decode round trip", [=] { return render_decode_roundtrip(200, seed); }},
        {"metric golden values", [=] { return metric_golden_values(seed); }},
        {"loss composition", [=] { return loss_composition(seed); }},
        {"format round trips", [=] { return format_roundtrips(50, seed); }},
        {"shape contract (quarter)", [=] { return shape_contract(ModelConfig::quarter(), seed); }},
        {"worker-count independence", [=] { return worker_independence(seed); }},
        {"model gradients", [=] { return model_gradients(seed); }},
        {"gradient harness sanity", [=] { return gradient_harness_sanity(seed); }},
        {"overfit smoke test", [=] { return overfit_smoke(seed, 50, 3); }},
    };
}

inline std::vector<CheckItem> run_selfcheck(const SelfCheckOptions& o = {},
                                            const std::function<void(const CheckItem&)>& on_item = {})
{
    std::vector<CheckItem> items;
    for (const auto& [name, f] : selfcheck_items(o)) {
        items.push_back(run_check(name, f));
        if (on_item)
            on_item(items.back());
    }
    return items;
}

} // namespace rht::check
