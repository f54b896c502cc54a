#pragma once

// Multi-scale feature fusion: residual FF blocks over concat(F_E, F_S, F_G) at 1x/2x/4x joined by
// 4x4 stride-2 transposed convolutions, then a 1x1 projection and logistic squashing.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/nn/layers.hpp"
#include "rht/stm.hpp"

namespace rht {

struct ScaleSpec {
    std::size_t size = 0; // square spatial extent
    std::size_t channels = 0;

    friend bool operator==(const ScaleSpec&, const ScaleSpec&) = default;
};

/// Spatial size doubles and channel count halves from one scale to the next.
struct ScaleTable {
    std::array<ScaleSpec, 3> scales;

    const ScaleSpec& operator[](ScaleTag s) const { return scales[index_of(s)]; }

    static ScaleTable full() { return {{{{32, 256}, {64, 128}, {128, 64}}}}; }
    static ScaleTable quarter() { return {{{{8, 32}, {16, 16}, {32, 8}}}}; }

    void validate() const
    {
        for (std::size_t i = 0; i < 3; ++i)
            detail::require(scales[i].size >= 1 && scales[i].channels >= 1, "scale table entries must be positive");
        for (std::size_t i = 1; i < 3; ++i)
            detail::require(scales[i].size == 2 * scales[i - 1].size &&
                                2 * scales[i].channels == scales[i - 1].channels,
                            "scale table must double spatial size and halve channels per step");
        // 1x features are produced by two stride-2 stages from the 4x input.
        detail::require(scales[2].size == 4 * scales[0].size, "scale table: 4x size must be four times 1x size");
    }

    friend bool operator==(const ScaleTable&, const ScaleTable&) = default;
};

template <class T = double>
struct ConvLayer {
    Tensor<T> kernel;
    Tensor<T> bias;

    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f)
    {
        f(prefix + ".kernel", kernel);
        f(prefix + ".bias", bias);
    }
    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) const
    {
        f(prefix + ".kernel", kernel);
        f(prefix + ".bias", bias);
    }
};

template <class T = double>
struct FusionWeights {
    std::array<std::vector<ConvLayer<T>>, 3> ff;  // per scale, one entry per FF block
    std::array<ConvLayer<T>, 2> upscale;         // 1x -> 2x, 2x -> 4x
    ConvLayer<T> projection;                     // 1 x 1, to M + P channels

    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f)
    {
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t b = 0; b < ff[s].size(); ++b)
                ff[s][b].for_each_tensor(prefix + ".ff" + to_string(all_scales[s]) + "." + std::to_string(b), f);
        for (std::size_t u = 0; u < 2; ++u)
            upscale[u].for_each_tensor(prefix + ".upscale" + std::to_string(u), f);
        projection.for_each_tensor(prefix + ".projection", f);
    }
    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) const
    {
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t b = 0; b < ff[s].size(); ++b)
                ff[s][b].for_each_tensor(prefix + ".ff" + to_string(all_scales[s]) + "." + std::to_string(b), f);
        for (std::size_t u = 0; u < 2; ++u)
            upscale[u].for_each_tensor(prefix + ".upscale" + std::to_string(u), f);
        projection.for_each_tensor(prefix + ".projection", f);
    }
};

inline constexpr nn::ConvGeometry fusion_conv_geometry{1, 1};
inline constexpr nn::ConvGeometry upscale_geometry{2, 1};
inline constexpr std::size_t upscale_kernel_size = 4;

/// Seeded weights for the table; fusion convolutions start small so the residual path dominates.
template <class T = double>
FusionWeights<T> make_fusion(const ScaleTable& table, std::size_t out_channels, std::size_t ff_blocks, Rng& rng)
{
    table.validate();
    detail::require(ff_blocks >= 1, "at least one FF block per scale is required");
    FusionWeights<T> w;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t c = table.scales[s].channels;
        for (std::size_t b = 0; b < ff_blocks; ++b) {
            ConvLayer<T> layer{nn::conv_kernel<T>(3, 3 * c, c, rng), Tensor<T>({c})};
            for (auto& v : layer.kernel.data)
                v *= T{0.1};
            w.ff[s].push_back(std::move(layer));
        }
    }
    for (std::size_t u = 0; u < 2; ++u) {
        const std::size_t cin = table.scales[u].channels, cout = table.scales[u + 1].channels;
        // Each output pixel of a 4x4 / stride 2 transposed conv receives 4 taps per input channel.
        w.upscale[u] = {nn::he_uniform<T>({upscale_kernel_size, upscale_kernel_size, cin, cout}, 4 * cin, rng),
                        Tensor<T>({cout})};
    }
    const std::size_t c4 = table.scales[2].channels;
    w.projection = {nn::conv_kernel<T>(1, c4, out_channels, rng), Tensor<T>({out_channels})};
    return w;
}

/// fg + Conv3x3(concat(fe, fs, fg)); no nonlinearity after the residual add.
template <class T>
Volume<T> ff_block(const Volume<T>& fe, const Volume<T>& fs, const Volume<T>& fg, const ConvLayer<T>& w,
                   Volume<T>* concat_out = nullptr)
{
    detail::require_shape(fe.grid() == fs.grid() && fs.grid() == fg.grid(),
                          "ff_block: spatial sizes differ (" + shape_string(fe) + ", " + shape_string(fs) + ", " +
                              shape_string(fg) + ")");
    detail::require_shape(w.kernel.shape.size() == 4 && w.kernel.dim(3) == fg.channels(),
                          "ff_block: convolution must output " + std::to_string(fg.channels()) + " channels");
    auto cat = concat_channels(fe, fs, fg);
    auto out = nn::conv2d(cat, w.kernel, w.bias, fusion_conv_geometry);
    add_in_place(out, fg);
    if (concat_out)
        *concat_out = std::move(cat);
    return out;
}

template <class T>
struct FfGradients {
    Volume<T> fe, fs, fg;
};

/// grad_weights accumulates; fg gradient includes the residual identity path.
template <class T>
FfGradients<T> ff_block_backward(const Volume<T>& concat_in, std::size_t fe_channels, std::size_t fs_channels,
                                 const ConvLayer<T>& w, const Volume<T>& grad_out, ConvLayer<T>& grad_weights)
{
    Volume<T> g_cat;
    nn::conv2d_backward(concat_in, w.kernel, fusion_conv_geometry, grad_out, &grad_weights.kernel, &grad_weights.bias,
                        &g_cat);
    FfGradients<T> g;
    g.fe = slice_channels(g_cat, 0, fe_channels);
    g.fs = slice_channels(g_cat, fe_channels, fs_channels);
    g.fg = slice_channels(g_cat, fe_channels + fs_channels, g_cat.channels() - fe_channels - fs_channels);
    add_in_place(g.fg, grad_out);
    return g;
}

/// Transposed convolution, kernel 4, stride 2, padding 1: (H, W) -> (2H, 2W).
template <class T>
Volume<T> upscale(const Volume<T>& volume, const ConvLayer<T>& w)
{
    detail::require_shape(w.kernel.shape.size() == 4 && w.kernel.dim(0) == upscale_kernel_size,
                          "upscale: kernel must be 4x4, got " + shape_string(w.kernel));
    return nn::conv_transpose2d(volume, w.kernel, w.bias, upscale_geometry);
}

template <class T>
Volume<T> upscale_backward(const Volume<T>& input, const ConvLayer<T>& w, const Volume<T>& grad_out,
                           ConvLayer<T>& grad_weights)
{
    Volume<T> g;
    nn::conv_transpose2d_backward(input, w.kernel, upscale_geometry, grad_out, &grad_weights.kernel,
                                  &grad_weights.bias, &g);
    return g;
}

template <class T>
struct MsffmTrace {
    std::array<std::vector<Volume<T>>, 3> ff_concat; // per scale, per block
    std::array<std::vector<Volume<T>>, 3> fg_in;     // F_G entering each block
    std::array<Volume<T>, 2> upscale_in;
    std::array<std::size_t, 3> fe_channels{};
    std::array<std::size_t, 3> fs_channels{};
    Volume<T> pre_projection;
    Volume<T> output; // after the logistic
};

/// ff(1x) -> upscale -> ff(2x) -> upscale -> ff(4x) -> 1x1 projection -> logistic.
template <class T>
Volume<T> msffm_forward(const std::array<Volume<T>, 3>& fe, const std::array<Volume<T>, 3>& fs, const Volume<T>& fg_1x,
                        const FusionWeights<T>& w, MsffmTrace<T>* trace = nullptr)
{
    MsffmTrace<T> local;
    MsffmTrace<T>& t = trace ? *trace : local;
    Volume<T> fg = fg_1x;
    for (std::size_t s = 0; s < 3; ++s) {
        t.ff_concat[s].clear();
        t.fg_in[s].clear();
        t.fe_channels[s] = fe[s].channels();
        t.fs_channels[s] = fs[s].channels();
        detail::require_shape(!w.ff[s].empty(), "msffm: no FF block at scale " + to_string(all_scales[s]));
        for (const auto& block : w.ff[s]) {
            Volume<T> cat;
            t.fg_in[s].push_back(fg);
            try {
                fg = ff_block(fe[s], fs[s], fg, block, &cat);
            } catch (const ShapeError& e) {
                throw ShapeError("msffm ff" + to_string(all_scales[s]) + ": " + e.what());
            }
            t.ff_concat[s].push_back(std::move(cat));
        }
        if (s < 2) {
            t.upscale_in[s] = fg;
            try {
                fg = upscale(fg, w.upscale[s]);
            } catch (const ShapeError& e) {
                throw ShapeError("msffm upscale" + std::to_string(s) + ": " + e.what());
            }
        }
    }
    t.pre_projection = fg;
    t.output = nn::logistic(nn::conv2d(fg, w.projection.kernel, w.projection.bias, {1, 0}));
    return t.output;
}

template <class T>
struct MsffmGradients {
    std::array<Volume<T>, 3> fe;
    std::array<Volume<T>, 3> fs;
    Volume<T> fg_1x;
};

/// Backward of msffm_forward given dLoss/dOutput (output is post-logistic).
template <class T>
MsffmGradients<T> msffm_backward(const MsffmTrace<T>& t, const FusionWeights<T>& w, const Volume<T>& grad_output,
                                 FusionWeights<T>& grads)
{
    MsffmGradients<T> out;
    auto g = nn::logistic_backward(t.output, grad_output);
    Volume<T> g_fg;
    nn::conv2d_backward(t.pre_projection, w.projection.kernel, {1, 0}, g, &grads.projection.kernel,
                        &grads.projection.bias, &g_fg);
    for (std::size_t s = 3; s-- > 0;) {
        for (std::size_t b = w.ff[s].size(); b-- > 0;) {
            auto fg_grads = ff_block_backward(t.ff_concat[s][b], t.fe_channels[s], t.fs_channels[s], w.ff[s][b], g_fg,
                                              grads.ff[s][b]);
            if (out.fe[s].empty()) {
                out.fe[s] = std::move(fg_grads.fe);
                out.fs[s] = std::move(fg_grads.fs);
            } else {
                add_in_place(out.fe[s], fg_grads.fe);
                add_in_place(out.fs[s], fg_grads.fs);
            }
            g_fg = std::move(fg_grads.fg);
        }
        if (s > 0)
            g_fg = upscale_backward(t.upscale_in[s - 1], w.upscale[s - 1], g_fg, grads.upscale[s - 1]);
    }
    out.fg_1x = std::move(g_fg);
    return out;
}

} // namespace rht
