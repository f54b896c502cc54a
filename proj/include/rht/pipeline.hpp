#pragma once

// End-to-end model: frozen backbone stub -> F_G, per-scale STM/HTM transfer of reference heatmap
// features, MSFFM fusion, losses, backward pass and plain gradient descent.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rht/core/error.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/dataio/manifest.hpp"
#include "rht/fusion.hpp"
#include "rht/heatmaps.hpp"
#include "rht/htm.hpp"
#include "rht/io/rhm1.hpp"
#include "rht/losses.hpp"
#include "rht/nn/layers.hpp"
#include "rht/stm.hpp"

namespace rht {

struct ModelConfig {
    std::size_t landmarks = 68;
    std::size_t boundaries = 13;
    std::string table_name = "quarter";
    ScaleTable table = ScaleTable::quarter();
    double lambda = default_lambda;
    double sigma = default_sigma;
    std::size_t patch_size = 3;
    std::uint64_t seed = 1;
    std::size_t ff_blocks = 1;
    LocalizationShape localization{8, 16, 16, 32};

    static ModelConfig quarter() { return {}; }

    static ModelConfig full()
    {
        ModelConfig c;
        c.table_name = "full";
        c.table = ScaleTable::full();
        c.localization.input_size = c.table.scales[0].size;
        return c;
    }

    std::size_t heatmap_channels() const { return landmarks + boundaries; }
    /// Target, reference and reference heatmaps all live at the 4x resolution.
    std::size_t image_size() const { return table[ScaleTag::x4].size; }

    void validate() const
    {
        table.validate();
        detail::require(landmarks >= 1, "config: at least one landmark is required");
        detail::require(boundaries == 0 || landmarks >= 2, "config: boundaries need at least two landmarks");
        detail::require(std::isfinite(lambda) && lambda >= 0, "config: lambda must be non-negative");
        detail::require(std::isfinite(sigma) && sigma > 0, "config: sigma must be positive");
        detail::require(patch_size % 2 == 1, "config: patch size must be odd");
        detail::require(ff_blocks >= 1, "config: at least one FF block per scale is required");
        detail::require(table.scales[0].size % localization.input_size == 0 && localization.input_size % 4 == 0,
                        "config: localization input size must divide the 1x size and be a multiple of 4");
        detail::require(table.scales[0].channels % 2 == 0, "config: 1x channel count must be even");
    }
};

inline nlohmann::json to_json(const ModelConfig& c)
{
    return {{"landmarks", c.landmarks},   {"boundaries", c.boundaries}, {"scale_table", c.table_name},
            {"lambda", c.lambda},         {"sigma", c.sigma},           {"patch_size", c.patch_size},
            {"seed", c.seed},             {"ff_blocks", c.ff_blocks},
            {"localization", {{"input_size", c.localization.input_size},
                              {"conv_channels", {c.localization.conv_channels0, c.localization.conv_channels1}},
                              {"hidden", c.localization.hidden}}}};
}

inline ModelConfig config_from_json(const nlohmann::json& j)
{
    ModelConfig c;
    try {
        const auto table = j.value("scale_table", std::string("quarter"));
        if (table == "full")
            c = ModelConfig::full();
        else if (table != "quarter")
            throw InvalidArgument("config: unknown scale_table '" + table + "' (expected quarter or full)");
        c.landmarks = j.value("landmarks", c.landmarks);
        c.boundaries = j.value("boundaries", c.boundaries);
        c.lambda = j.value("lambda", c.lambda);
        c.sigma = j.value("sigma", c.sigma);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.seed = j.value("seed", c.seed);
        c.ff_blocks = j.value("ff_blocks", c.ff_blocks);
        if (j.contains("localization")) {
            const auto& l = j.at("localization");
            c.localization.input_size = l.value("input_size", c.localization.input_size);
            if (l.contains("conv_channels")) {
                c.localization.conv_channels0 = l.at("conv_channels").at(0).get<std::size_t>();
                c.localization.conv_channels1 = l.at("conv_channels").at(1).get<std::size_t>();
            }
            c.localization.hidden = l.value("hidden", c.localization.hidden);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Boundary polylines for a config: the 68-point convention when it fits, otherwise consecutive
/// landmark pairs.
inline BoundaryDefinition boundaries_for(const ModelConfig& c)
{
    if (c.landmarks == 68 && c.boundaries == 13)
        return dataio::default_convention_68().boundaries;
    BoundaryDefinition b;
    for (std::size_t p = 0; p < c.boundaries; ++p)
        b.boundaries.push_back({p % c.landmarks, (p + 1) % c.landmarks});
    return b;
}

// ---------------------------------------------------------------------------------------------
// Parameters

/// Seeded random-weight stand-in for the pretrained encoder; never trained.
struct BackboneStub {
    ConvLayer<double> conv0, conv1;

    Volume<double> forward(const Volume<double>& image) const
    {
        auto x = nn::relu(nn::conv2d(image, conv0.kernel, conv0.bias, {2, 1}));
        return nn::relu(nn::conv2d(x, conv1.kernel, conv1.bias, {2, 1}));
    }
};

template <class T = double>
struct Params {
    std::array<ExtractorWeights<T>, 3> qk; // shared by F_Q and F_K
    std::array<ExtractorWeights<T>, 3> v;  // reference heatmaps -> F_V
    std::array<LocalizationWeights<T>, 3> loc;
    FusionWeights<T> fusion;

    template <class F>
    void for_each_tensor(F&& f)
    {
        visit(*this, f);
    }
    template <class F>
    void for_each_tensor(F&& f) const
    {
        visit(*this, f);
    }

    /// Same structure, all zeros.
    Params zeros_like() const
    {
        Params z = *this;
        z.for_each_tensor([](const std::string&, Tensor<T>& t) { std::fill(t.data.begin(), t.data.end(), T{0}); });
        return z;
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for_each_tensor([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

private:
    template <class Self, class F>
    static void visit(Self& self, F& f)
    {
        for (std::size_t s = 0; s < 3; ++s) {
            const auto tag = to_string(all_scales[s]);
            self.qk[s].for_each_tensor("qk." + tag, f);
            self.v[s].for_each_tensor("v." + tag, f);
            self.loc[s].for_each_tensor("loc." + tag, f);
        }
        self.fusion.for_each_tensor("fusion", f);
    }
};

struct Model {
    ModelConfig config;
    BoundaryDefinition boundaries;
    BackboneStub backbone;
    Params<double> params;
};

inline constexpr std::size_t image_channels = 3;

inline Model make_model(const ModelConfig& config)
{
    config.validate();
    Model m;
    m.config = config;
    m.boundaries = boundaries_for(config);
    Rng root(config.seed);
    Rng rb = root.split(), rx = root.split(), rl = root.split(), rf = root.split();
    const std::size_t c1 = config.table[ScaleTag::x1].channels;
    m.backbone.conv0 = {nn::conv_kernel<double>(3, image_channels, c1 / 2, rb), Tensor<double>({c1 / 2})};
    m.backbone.conv1 = {nn::conv_kernel<double>(3, c1 / 2, c1, rb), Tensor<double>({c1})};
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t c = config.table.scales[s].channels;
        m.params.qk[s] = make_extractor<double>(image_channels, c, rx);
        m.params.v[s] = make_extractor<double>(config.heatmap_channels(), c, rx);
        m.params.loc[s] = make_localization<double>(2 * c, config.localization, rl);
    }
    m.params.fusion = make_fusion<double>(config.table, config.heatmap_channels(), config.ff_blocks, rf);
    return m;
}

/// Named pointers to every trainable tensor, in a fixed order.
inline std::vector<std::pair<std::string, Tensor<double>*>> tensor_list(Params<double>& p)
{
    std::vector<std::pair<std::string, Tensor<double>*>> out;
    p.for_each_tensor([&](const std::string& n, Tensor<double>& t) { out.emplace_back(n, &t); });
    return out;
}

inline std::vector<std::pair<std::string, const Tensor<double>*>> tensor_list(const Params<double>& p)
{
    std::vector<std::pair<std::string, const Tensor<double>*>> out;
    p.for_each_tensor([&](const std::string& n, const Tensor<double>& t) { out.emplace_back(n, &t); });
    return out;
}

inline void save_params(const std::filesystem::path& path, const Params<double>& p)
{
    io::save_checkpoint(path, tensor_list(p));
}

inline void load_params(const std::filesystem::path& path, Params<double>& p) { io::load_checkpoint(path, tensor_list(p)); }

// ---------------------------------------------------------------------------------------------
// Synthetic data

struct Sample {
    Volume<double> target_image;
    Volume<double> reference_image;
    LandmarkSet target_landmarks;
    LandmarkSet reference_landmarks;
    HeatmapStack<double> target_heatmaps; // ground truth
    HeatmapStack<double> reference_heatmaps;
};

/// Three-channel image drawn from landmarks: Gaussian blobs, boundary ridges and a smooth shading.
inline Volume<double> synthesize_image(const LandmarkSet& lm, const BoundaryDefinition& b, std::size_t size)
{
    const GridSize grid{size, size};
    const auto blobs = render_landmark_heatmaps(lm, grid, 2.0);
    const auto ridges = render_boundary_heatmaps(lm, b, grid, 1.0);
    Volume<double> img(size, size, image_channels);
    const double s = static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            double blob = 0, ridge = 0;
            for (double v : blobs.data.pixel(y, x))
                blob = std::max(blob, v);
            for (double v : ridges.data.pixel(y, x))
                ridge = std::max(ridge, v);
            const double shade = 0.5 + 0.25 * std::sin(3.0 * static_cast<double>(x) / s + 2.0 * static_cast<double>(y) / s);
            auto p = img.pixel(y, x);
            p[0] = std::clamp(0.2 + 0.8 * blob, 0.0, 1.0);
            p[1] = std::clamp(0.1 + 0.9 * ridge, 0.0, 1.0);
            p[2] = shade;
        }
    return img;
}

/// Target landmarks scattered in the central region; the reference is a small similarity transform
/// of the target.
inline Sample make_synthetic_sample(const Model& model, std::uint64_t seed)
{
    const auto& c = model.config;
    const std::size_t size = c.image_size();
    const double s = static_cast<double>(size);
    Rng rng(seed);
    std::vector<Point2> pts(c.landmarks);
    for (auto& p : pts)
        p = {rng.uniform(0.2, 0.8) * (s - 1), rng.uniform(0.2, 0.8) * (s - 1)};
    Sample out;
    out.target_landmarks = LandmarkSet::visible_points(pts, {size, size});
    const double angle = rng.uniform(-0.15, 0.15), scale = rng.uniform(0.95, 1.05);
    const double tx = rng.uniform(-0.03, 0.03) * s, ty = rng.uniform(-0.03, 0.03) * s;
    const double cx = (s - 1) / 2, cy = (s - 1) / 2;
    std::vector<Point2> ref(pts.size());
    for (std::size_t m = 0; m < pts.size(); ++m) {
        const double dx = pts[m].x - cx, dy = pts[m].y - cy;
        ref[m] = {cx + tx + scale * (std::cos(angle) * dx - std::sin(angle) * dy),
                  cy + ty + scale * (std::sin(angle) * dx + std::cos(angle) * dy)};
    }
    out.reference_landmarks = LandmarkSet::visible_points(ref, {size, size});
    out.target_image = synthesize_image(out.target_landmarks, model.boundaries, size);
    out.reference_image = synthesize_image(out.reference_landmarks, model.boundaries, size);
    out.target_heatmaps = render_heatmaps(out.target_landmarks, model.boundaries, {size, size}, c.sigma);
    out.reference_heatmaps = render_heatmaps(out.reference_landmarks, model.boundaries, {size, size}, c.sigma);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Forward

struct ScaleIntermediates {
    Volume<double> fq, fk, fv;
    CorrelationArtifacts<double> art; // D and A only
    AffineMatrix<double> theta;
    SampleGrid<double> grid;
    Volume<double> fs, fe;
    ExtractorTrace<double> q_trace, k_trace, v_trace;
    LocalizationTrace<double> loc_trace;
};

inline constexpr std::size_t attention_histogram_bins = 20;

struct Intermediates {
    Volume<double> fg;
    std::array<ScaleIntermediates, 3> scales;
    MsffmTrace<double> fusion;
    HeatmapStack<double> output;
    /// Counts of A over [-1, 1] in equal bins, all scales pooled.
    std::array<std::size_t, attention_histogram_bins> attention_histogram{};
};

struct ForwardOptions {
    /// Reuse D and A from an earlier pass instead of recomputing the correlation.
    const std::array<CorrelationArtifacts<double>, 3>* frozen_artifacts = nullptr;
};

namespace detail {

template <class F>
auto stage(const std::string& name, F&& f)
{
    try {
        return f();
    } catch (const ShapeError& e) {
        throw ShapeError(name + ": " + e.what());
    }
}

inline void histogram_add(std::array<std::size_t, attention_histogram_bins>& h, std::span<const double> values)
{
    for (double a : values) {
        const double t = (std::clamp(a, -1.0, 1.0) + 1.0) / 2.0;
        auto bin = static_cast<std::size_t>(t * attention_histogram_bins);
        h[std::min(bin, attention_histogram_bins - 1)] += 1;
    }
}

} // namespace detail

inline Intermediates forward(const Model& model, const Volume<double>& target_image,
                             const Volume<double>& reference_image, const Volume<double>& reference_heatmaps,
                             const ForwardOptions& options = {})
{
    const auto& c = model.config;
    const std::size_t size = c.image_size();
    detail::require_shape(target_image.height() == size && target_image.width() == size &&
                              target_image.channels() == image_channels,
                          "forward: target image must be " + std::to_string(size) + "x" + std::to_string(size) +
                              "x3, got " + shape_string(target_image));
    detail::require_shape(reference_image.same_shape(target_image),
                          "forward: reference image " + shape_string(reference_image) + " differs from target");
    detail::require_shape(reference_heatmaps.height() == size && reference_heatmaps.width() == size &&
                              reference_heatmaps.channels() == c.heatmap_channels(),
                          "forward: reference heatmaps must be " + std::to_string(size) + "x" + std::to_string(size) +
                              "x" + std::to_string(c.heatmap_channels()) + ", got " + shape_string(reference_heatmaps));
    const auto& p = model.params;
    Intermediates it;
    it.fg = detail::stage("backbone", [&] { return model.backbone.forward(target_image); });
    std::array<Volume<double>, 3> fe, fs;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto tag = all_scales[s];
        const auto name = to_string(tag);
        auto& sc = it.scales[s];
        sc.fq = detail::stage("extract F_Q " + name,
                              [&] { return extract_local_features(target_image, p.qk[s], tag, &sc.q_trace); });
        sc.fk = detail::stage("extract F_K " + name,
                              [&] { return extract_local_features(reference_image, p.qk[s], tag, &sc.k_trace); });
        sc.fv = detail::stage("extract F_V " + name,
                              [&] { return extract_local_features(reference_heatmaps, p.v[s], tag, &sc.v_trace); });
        sc.art = detail::stage("stm " + name, [&] {
            if (options.frozen_artifacts)
                return (*options.frozen_artifacts)[s];
            return correlate_argmax(l2_normalize(unfold(sc.fq, c.patch_size)), l2_normalize(unfold(sc.fk, c.patch_size)));
        });
        sc.fs = detail::stage("stm " + name, [&] { return soft_transfer(sc.fv, sc.art); });
        sc.theta = detail::stage("htm " + name, [&] { return estimate_affine(sc.fq, sc.fk, p.loc[s], &sc.loc_trace); });
        sc.grid = affine_grid(sc.theta, sc.fv.grid());
        sc.fe = detail::stage("htm " + name, [&] { return bilinear_sample(sc.fv, sc.grid); });
        detail::histogram_add(it.attention_histogram, sc.art.A);
        fe[s] = sc.fe;
        fs[s] = sc.fs;
    }
    auto out = detail::stage("msffm", [&] { return msffm_forward(fe, fs, it.fg, p.fusion, &it.fusion); });
    it.output.data = std::move(out);
    it.output.landmark_channels = c.landmarks;
    it.output.boundary_channels = c.boundaries;
    it.output.sigma = c.sigma;
    return it;
}

inline Intermediates forward(const Model& model, const Sample& sample, const ForwardOptions& options = {})
{
    return forward(model, sample.target_image, sample.reference_image, sample.reference_heatmaps.data, options);
}

inline std::array<CorrelationArtifacts<double>, 3> artifacts_of(const Intermediates& it)
{
    return {it.scales[0].art, it.scales[1].art, it.scales[2].art};
}

/// Consistency loss averaged over the three scales.
inline double consistency_term(const Intermediates& it)
{
    double sum = 0;
    for (const auto& sc : it.scales)
        sum += consistency_loss<double>(sc.fe, sc.fs, sc.art.A);
    return sum / 3.0;
}

inline LossReport evaluate_loss(const Model& model, const Intermediates& it, const HeatmapStack<double>& truth,
                                const std::vector<std::uint8_t>& visibility)
{
    const double l1 = heatmap_loss(it.output, truth, visibility);
    return overall_loss(l1, consistency_term(it), model.config.lambda);
}

/// Overall loss of a minus overall loss of b, differenced term by term before summation so the
/// result keeps its precision when both losses are large and nearly equal.
inline double loss_difference(const Model& model, const Intermediates& a, const Intermediates& b,
                              const HeatmapStack<double>& truth, const std::vector<std::uint8_t>& visibility)
{
    detail::check_heatmap_pair(a.output, truth, visibility);
    detail::check_heatmap_pair(b.output, truth, visibility);
    const std::size_t m_count = truth.landmark_channels, p_count = truth.boundary_channels, ch = truth.channels();
    std::vector<double> per_channel(ch, 0.0);
    auto pa = a.output.data.values();
    auto pb = b.output.data.values();
    auto t = truth.data.values();
    for (std::size_t i = 0; i < t.size(); ++i)
        per_channel[i % ch] += (pa[i] - pb[i]) * (pa[i] + pb[i] - 2 * t[i]);
    double lm = 0, bd = 0;
    for (std::size_t m = 0; m < m_count; ++m)
        if (visibility[m])
            lm += per_channel[m];
    for (std::size_t p = 0; p < p_count; ++p)
        bd += per_channel[m_count + p];
    double l1 = lm / static_cast<double>(m_count);
    if (p_count > 0)
        l1 += bd / static_cast<double>(p_count);
    double l2 = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& sa = a.scales[s];
        const auto& sb = b.scales[s];
        detail::require_shape(sa.fe.same_shape(sb.fe) && sa.fs.same_shape(sb.fs), "loss_difference: scale shapes differ");
        const std::size_t c = sa.fe.channels();
        auto ea = sa.fe.values(), eb = sb.fe.values(), fa = sa.fs.values(), fb = sb.fs.values();
        double sum = 0;
        for (std::size_t i = 0; i < ea.size(); ++i)
            sum += std::abs(ea[i] * sa.art.A[i / c] - fa[i]) - std::abs(eb[i] * sb.art.A[i / c] - fb[i]);
        l2 += sum / static_cast<double>(ea.size());
    }
    return l1 + model.config.lambda * l2 / 3.0;
}

// ---------------------------------------------------------------------------------------------
// Backward

/// Gradients of the overall loss with respect to every trainable tensor; D and A are constants.
inline Params<double> backward(const Model& model, const Intermediates& it, const HeatmapStack<double>& truth,
                               const std::vector<std::uint8_t>& visibility)
{
    detail::require(!it.output.data.empty() && !it.fusion.output.empty(), "backward: missing forward intermediates");
    const auto& p = model.params;
    Params<double> g = p.zeros_like();
    const auto g_out = heatmap_loss_gradient(it.output, truth, visibility);
    auto mg = msffm_backward(it.fusion, p.fusion, g_out, g.fusion);
    const double l2_weight = model.config.lambda / 3.0;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& sc = it.scales[s];
        auto cg = consistency_loss_gradient<double>(sc.fe, sc.fs, sc.art.A, l2_weight);
        add_in_place(mg.fe[s], cg.fe);
        add_in_place(mg.fs[s], cg.fs);
        auto g_v = soft_transfer_backward(sc.fv.grid(), sc.art, mg.fs[s]);
        auto bg = bilinear_sample_backward(sc.fv, sc.grid, mg.fe[s]);
        add_in_place(g_v, bg.values);
        const auto g_theta = affine_grid_backward<double>(sc.grid, bg.grid_x, bg.grid_y);
        auto [g_q, g_k] = localization_backward(sc.loc_trace, p.loc[s], g_theta, g.loc[s], sc.fq.channels());
        extractor_backward(sc.q_trace, p.qk[s], g_q, g.qk[s]);
        extractor_backward(sc.k_trace, p.qk[s], g_k, g.qk[s]);
        extractor_backward(sc.v_trace, p.v[s], g_v, g.v[s]);
    }
    return g;
}

/// params -= lr * grads.
inline void sgd_step(Params<double>& params, const Params<double>& grads, double lr)
{
    detail::require(std::isfinite(lr), "sgd_step: learning rate must be finite");
    auto dst = tensor_list(params);
    const auto src = tensor_list(grads);
    detail::require_shape(dst.size() == src.size(), "sgd_step: gradient structure differs from parameters");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto& t = *dst[i].second;
        const auto& gt = *src[i].second;
        detail::require_shape(t.shape == gt.shape, "sgd_step: shape mismatch for " + dst[i].first);
        for (std::size_t k = 0; k < t.size(); ++k)
            t.data[k] -= lr * gt.data[k];
    }
}

struct OverfitResult {
    std::vector<double> trace;      // overall loss before step 0, then after every step
    std::vector<LossReport> reports;
    bool diverged = false;
    std::size_t steps_run = 0;
};

inline constexpr double default_overfit_lr = 1e-3;

/// Plain gradient descent on one sample. Stops early when the loss exceeds 10x its initial value
/// or becomes non-finite.
inline OverfitResult overfit_single(Model& model, const Sample& sample, std::size_t steps = 50,
                                    double lr = default_overfit_lr)
{
    OverfitResult r;
    const auto& vis = sample.target_landmarks.visibility;
    auto it = forward(model, sample);
    auto report = evaluate_loss(model, it, sample.target_heatmaps, vis);
    const double initial = report.overall;
    r.trace.push_back(initial);
    r.reports.push_back(report);
    for (std::size_t k = 0; k < steps; ++k) {
        const auto g = backward(model, it, sample.target_heatmaps, vis);
        sgd_step(model.params, g, lr);
        it = forward(model, sample);
        report = evaluate_loss(model, it, sample.target_heatmaps, vis);
        r.trace.push_back(report.overall);
        r.reports.push_back(report);
        r.steps_run = k + 1;
        if (!std::isfinite(report.overall) || report.overall > 10 * initial) {
            r.diverged = true;
            break;
        }
    }
    return r;
}

} // namespace rht
