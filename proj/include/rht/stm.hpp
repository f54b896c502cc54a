#pragma once

// Soft transformation: patch-level correlation between target and reference descriptors, hard
// argmax selection of reference value features, and reweighting by the correlation maximum.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/nn/layers.hpp"

namespace rht {

enum class ScaleTag : std::uint8_t { x1 = 0, x2 = 1, x4 = 2 };

inline constexpr std::array<ScaleTag, 3> all_scales{ScaleTag::x1, ScaleTag::x2, ScaleTag::x4};

inline std::string to_string(ScaleTag s)
{
    switch (s) {
    case ScaleTag::x1: return "1x";
    case ScaleTag::x2: return "2x";
    case ScaleTag::x4: return "4x";
    }
    return "?";
}

inline std::size_t index_of(ScaleTag s) { return static_cast<std::size_t>(s); }

/// Descriptor grid tagged with the scale it belongs to.
template <class T = double>
struct FeatureVolume {
    Volume<T> data;
    ScaleTag scale = ScaleTag::x1;
};

/// One descriptor per spatial position (row-major), each of length k*k*C.
template <class T = double>
struct PatchMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_size = 1;
    bool unit_norm = false;
    std::vector<T> data;
    std::vector<std::uint8_t> zero_rows; // filled by l2_normalize

    std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// Zero-padded k x k neighbourhood of every position, flattened as (dy, dx, c).
template <class T>
PatchMatrix<T> unfold(const Volume<T>& volume, std::size_t k)
{
    detail::require(k % 2 == 1, "unfold: patch size must be odd, got " + std::to_string(k));
    detail::require_shape(!volume.empty(), "unfold: empty volume");
    const std::size_t c = volume.channels();
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    PatchMatrix<T> p;
    p.rows = volume.pixels();
    p.cols = k * k * c;
    p.patch_size = k;
    p.data.assign(p.rows * p.cols, T{0});
    const auto h = static_cast<std::ptrdiff_t>(volume.height()), w = static_cast<std::ptrdiff_t>(volume.width());
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            T* dst = p.data.data() + static_cast<std::size_t>(y * w + x) * p.cols;
            for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx, dst += c) {
                    const auto sy = y + dy, sx = x + dx;
                    if (sy < 0 || sx < 0 || sy >= h || sx >= w)
                        continue;
                    auto src = volume.pixel(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
                    std::copy(src.begin(), src.end(), dst);
                }
        }
    return p;
}

/// Scales each nonzero row to unit L2 norm; all-zero rows are left as is and flagged.
template <class T>
PatchMatrix<T> l2_normalize(PatchMatrix<T> patches)
{
    patches.zero_rows.assign(patches.rows, 0);
    for (std::size_t i = 0; i < patches.rows; ++i) {
        auto r = patches.row(i);
        T ss{0};
        for (T v : r)
            ss += v * v;
        if (ss == T{0}) {
            patches.zero_rows[i] = 1;
            continue;
        }
        const T norm = std::sqrt(ss);
        for (T& v : r)
            v /= norm;
    }
    patches.unit_norm = true;
    return patches;
}

/// Dense correlation matrix C plus its per-row argmax D and maximum A.
template <class T = double>
struct CorrelationArtifacts {
    std::size_t rows = 0; // query positions
    std::size_t cols = 0; // reference positions
    std::vector<T> C;     // rows x cols, row-major; empty when only D and A were computed
    std::vector<std::size_t> D;
    std::vector<T> A;
};

namespace detail {

inline constexpr std::size_t corr_row_block = 4;
inline constexpr std::size_t corr_col_tile = 16;
inline constexpr std::size_t corr_col_panel = 256;

template <class T>
void check_correlation_inputs(const PatchMatrix<T>& q, const PatchMatrix<T>& k)
{
    require(q.unit_norm && k.unit_norm, "correlate: inputs must be l2-normalized");
    require_shape(q.cols == k.cols, "correlate: descriptor length mismatch (" + std::to_string(q.cols) + " vs " +
                                        std::to_string(k.cols) + ")");
}

// Reference rows packed in column tiles of corr_col_tile, each tile stored descriptor-major so the
// innermost loop runs over contiguous reference positions. Padding columns are zero.
template <class T>
std::vector<T> pack_reference(const PatchMatrix<T>& k, std::size_t& tiles)
{
    tiles = (k.rows + corr_col_tile - 1) / corr_col_tile;
    std::vector<T> packed(tiles * corr_col_tile * k.cols, T{0});
    for (std::size_t j = 0; j < k.rows; ++j) {
        const std::size_t t = j / corr_col_tile, jj = j % corr_col_tile;
        T* tile = packed.data() + t * corr_col_tile * k.cols;
        auto r = k.row(j);
        for (std::size_t d = 0; d < k.cols; ++d)
            tile[d * corr_col_tile + jj] = r[d];
    }
    return packed;
}

// Blocked inner-product kernel. For every (query row i, reference column j) the sum runs over the
// descriptor in increasing order starting from zero, so each entry is bit-identical to the plain
// triple loop; blocking only changes which entries are computed together. sink(i, j0, values, n)
// receives consecutive entries C[i, j0 .. j0+n) with j0 increasing per row.
template <class T, class Sink>
void correlation_kernel(const PatchMatrix<T>& q, const PatchMatrix<T>& k, Sink&& sink)
{
    std::size_t tiles = 0;
    const std::vector<T> packed = pack_reference(k, tiles);
    const std::size_t dlen = q.cols;
    const std::size_t tiles_per_panel = corr_col_panel / corr_col_tile;
    const std::size_t blocks = (q.rows + corr_row_block - 1) / corr_row_block;
    parallel_chunks(blocks, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t panel = 0; panel < tiles; panel += tiles_per_panel) {
            const std::size_t panel_end = std::min(tiles, panel + tiles_per_panel);
            for (std::size_t b = b0; b < b1; ++b) {
                const std::size_t i0 = b * corr_row_block;
                const std::size_t nr = std::min(corr_row_block, q.rows - i0);
                const T* qrow[corr_row_block];
                for (std::size_t r = 0; r < corr_row_block; ++r)
                    qrow[r] = q.data.data() + std::min(i0 + r, q.rows - 1) * dlen;
                for (std::size_t t = panel; t < panel_end; ++t) {
                    const T* tile = packed.data() + t * corr_col_tile * dlen;
                    T acc[corr_row_block][corr_col_tile] = {};
                    for (std::size_t d = 0; d < dlen; ++d) {
                        const T* kv = tile + d * corr_col_tile;
                        for (std::size_t r = 0; r < corr_row_block; ++r) {
                            const T qv = qrow[r][d];
                            for (std::size_t jj = 0; jj < corr_col_tile; ++jj)
                                acc[r][jj] += qv * kv[jj];
                        }
                    }
                    const std::size_t j0 = t * corr_col_tile;
                    const std::size_t nc = std::min(corr_col_tile, k.rows - j0);
                    for (std::size_t r = 0; r < nr; ++r)
                        sink(i0 + r, j0, acc[r], nc);
                }
            }
        }
    });
}

} // namespace detail

/// Full correlation: C[i, j] = <q_i, k_j>, D[i] = smallest j maximizing C[i, .], A[i] = max_j C[i, j].
template <class T>
CorrelationArtifacts<T> correlate(const PatchMatrix<T>& q, const PatchMatrix<T>& kref)
{
    detail::check_correlation_inputs(q, kref);
    CorrelationArtifacts<T> art;
    art.rows = q.rows;
    art.cols = kref.rows;
    art.C.assign(q.rows * kref.rows, T{0});
    detail::correlation_kernel(q, kref, [&](std::size_t i, std::size_t j0, const T* v, std::size_t n) {
        std::copy(v, v + n, art.C.data() + i * art.cols + j0);
    });
    art.D.assign(art.rows, 0);
    art.A.assign(art.rows, T{0});
    parallel_for(art.rows, [&](std::size_t i) {
        const T* row = art.C.data() + i * art.cols;
        std::size_t best = 0;
        for (std::size_t j = 1; j < art.cols; ++j)
            if (row[j] > row[best])
                best = j;
        art.D[i] = best;
        art.A[i] = row[best];
    });
    return art;
}

/// D and A only, without materializing the (HW) x (HW) matrix.
template <class T>
CorrelationArtifacts<T> correlate_argmax(const PatchMatrix<T>& q, const PatchMatrix<T>& kref)
{
    detail::check_correlation_inputs(q, kref);
    CorrelationArtifacts<T> art;
    art.rows = q.rows;
    art.cols = kref.rows;
    art.D.assign(art.rows, 0);
    art.A.assign(art.rows, -std::numeric_limits<T>::infinity());
    detail::correlation_kernel(q, kref, [&](std::size_t i, std::size_t j0, const T* v, std::size_t n) {
        for (std::size_t jj = 0; jj < n; ++jj)
            if (v[jj] > art.A[i]) {
                art.A[i] = v[jj];
                art.D[i] = j0 + jj;
            }
    });
    return art;
}

/// F_S[i] = values[D[i]] * A[i].
template <class T>
Volume<T> soft_transfer(const Volume<T>& values, const CorrelationArtifacts<T>& art)
{
    detail::require_shape(art.D.size() == values.pixels() && art.A.size() == values.pixels(),
                          "soft_transfer: artifacts sized for " + std::to_string(art.D.size()) +
                              " positions, values have " + std::to_string(values.pixels()));
    Volume<T> out(values.height(), values.width(), values.channels());
    for (std::size_t i = 0; i < values.pixels(); ++i) {
        detail::require(art.D[i] < values.pixels(), "soft_transfer: index " + std::to_string(art.D[i]) +
                                                         " out of range at position " + std::to_string(i));
        auto src = values.pixel(art.D[i]);
        auto dst = out.pixel(i);
        for (std::size_t c = 0; c < src.size(); ++c)
            dst[c] = src[c] * art.A[i];
    }
    return out;
}

/// Gradient of soft_transfer with respect to the value features (D and A held fixed).
template <class T>
Volume<T> soft_transfer_backward(GridSize values_grid, const CorrelationArtifacts<T>& art, const Volume<T>& grad_out)
{
    Volume<T> g(values_grid.height, values_grid.width, grad_out.channels());
    for (std::size_t i = 0; i < grad_out.pixels(); ++i) {
        auto dst = g.pixel(art.D[i]);
        auto src = grad_out.pixel(i);
        for (std::size_t c = 0; c < src.size(); ++c)
            dst[c] += src[c] * art.A[i];
    }
    return g;
}

// ---------------------------------------------------------------------------------------------
// Local feature extractor: three stages of 3x3 conv -> per-channel affine -> ReLU with widths
// (32, 64, C_scale). Stride-2 stages: two at 1x, one at 2x, none at 4x.

template <class T = double>
struct ConvStage {
    Tensor<T> kernel; // 3 x 3 x cin x cout
    Tensor<T> bias;
    Tensor<T> scale;
    Tensor<T> shift;

    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) { visit(*this, prefix, f); }
    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) const { visit(*this, prefix, f); }

private:
    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F& f)
    {
        f(prefix + ".kernel", self.kernel);
        f(prefix + ".bias", self.bias);
        f(prefix + ".scale", self.scale);
        f(prefix + ".shift", self.shift);
    }
};

template <class T = double>
struct ExtractorWeights {
    std::array<ConvStage<T>, 3> stages;

    std::size_t input_channels() const { return stages[0].kernel.dim(2); }
    std::size_t output_channels() const { return stages[2].kernel.dim(3); }

    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f)
    {
        for (std::size_t s = 0; s < stages.size(); ++s)
            stages[s].for_each_tensor(prefix + ".stage" + std::to_string(s), f);
    }
    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) const
    {
        for (std::size_t s = 0; s < stages.size(); ++s)
            stages[s].for_each_tensor(prefix + ".stage" + std::to_string(s), f);
    }
};

inline constexpr std::array<std::size_t, 2> extractor_hidden_widths{32, 64};

inline std::array<std::size_t, 3> extractor_strides(ScaleTag s)
{
    switch (s) {
    case ScaleTag::x1: return {2, 2, 1};
    case ScaleTag::x2: return {2, 1, 1};
    case ScaleTag::x4: return {1, 1, 1};
    }
    return {1, 1, 1};
}

template <class T = double>
ExtractorWeights<T> make_extractor(std::size_t in_channels, std::size_t out_channels, Rng& rng)
{
    const std::array<std::size_t, 4> widths{in_channels, extractor_hidden_widths[0], extractor_hidden_widths[1],
                                            out_channels};
    ExtractorWeights<T> w;
    for (std::size_t s = 0; s < 3; ++s) {
        auto& st = w.stages[s];
        st.kernel = nn::conv_kernel<T>(3, widths[s], widths[s + 1], rng);
        st.bias = Tensor<T>({widths[s + 1]});
        for (auto& b : st.bias.data)
            b = static_cast<T>(rng.uniform(-0.05, 0.05));
        st.scale = Tensor<T>({widths[s + 1]}, T{1});
        st.shift = Tensor<T>({widths[s + 1]});
    }
    return w;
}

/// Per-stage activations kept for the backward pass.
template <class T>
struct ExtractorTrace {
    ScaleTag scale = ScaleTag::x1;
    std::array<Volume<T>, 3> inputs;
    std::array<Volume<T>, 3> conv_out;
    std::array<Volume<T>, 3> affine_out;
};

template <class T>
void check_extractor(const ExtractorWeights<T>& w, std::size_t in_channels)
{
    std::size_t c = in_channels;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& st = w.stages[s];
        detail::require_shape(st.kernel.shape.size() == 4 && st.kernel.dim(0) == 3 && st.kernel.dim(1) == 3,
                              "extractor stage " + std::to_string(s) + ": kernel must be 3x3, got " +
                                  shape_string(st.kernel));
        detail::require_shape(st.kernel.dim(2) == c, "extractor stage " + std::to_string(s) + ": expects " +
                                                         std::to_string(st.kernel.dim(2)) + " input channels, got " +
                                                         std::to_string(c));
        c = st.kernel.dim(3);
        detail::require_shape(st.bias.size() == c && st.scale.size() == c && st.shift.size() == c,
                              "extractor stage " + std::to_string(s) + ": per-channel parameters must have " +
                                  std::to_string(c) + " entries");
    }
}

template <class T>
Volume<T> extract_local_features(const Volume<T>& image, const ExtractorWeights<T>& w, ScaleTag target_scale,
                                 ExtractorTrace<T>* trace = nullptr)
{
    check_extractor(w, image.channels());
    const auto strides = extractor_strides(target_scale);
    Volume<T> x = image;
    if (trace)
        trace->scale = target_scale;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& st = w.stages[s];
        auto conv = nn::conv2d(x, st.kernel, st.bias, {strides[s], 1});
        auto aff = nn::channel_affine(conv, st.scale, st.shift);
        auto next = nn::relu(aff);
        if (trace) {
            trace->inputs[s] = std::move(x);
            trace->conv_out[s] = std::move(conv);
            trace->affine_out[s] = std::move(aff);
        }
        x = std::move(next);
    }
    return x;
}

/// Accumulates weight gradients into grads; returns the gradient with respect to the input image
/// when want_input is set (otherwise an empty volume).
template <class T>
Volume<T> extractor_backward(const ExtractorTrace<T>& trace, const ExtractorWeights<T>& w, const Volume<T>& grad_out,
                             ExtractorWeights<T>& grads, bool want_input = false)
{
    const auto strides = extractor_strides(trace.scale);
    Volume<T> g = grad_out;
    for (std::size_t s = 3; s-- > 0;) {
        const auto& st = w.stages[s];
        auto& gs = grads.stages[s];
        g = nn::relu_backward(trace.affine_out[s], g);
        g = nn::channel_affine_backward(trace.conv_out[s], st.scale, g, &gs.scale, &gs.shift);
        Volume<T> gin;
        const bool need_in = s > 0 || want_input;
        nn::conv2d_backward(trace.inputs[s], st.kernel, {strides[s], 1}, g, &gs.kernel, &gs.bias,
                            need_in ? &gin : nullptr);
        g = std::move(gin);
    }
    return g;
}

} // namespace rht
