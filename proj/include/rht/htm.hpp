#pragma once

// Hard transformation: a localization head regresses a 2x3 affine matrix from target and
// reference descriptors, and reference value features are warped by bilinear sampling.
//
// Theta acts on normalized coordinates in [-1, 1] where -1 and +1 are the centres of the first and
// last pixel, so the same matrix is meaningful at every scale.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/nn/layers.hpp"

namespace rht {

template <class T = double>
struct AffineMatrix {
    std::array<T, 6> theta{1, 0, 0, 0, 1, 0}; // row-major 2 x 3

    static AffineMatrix identity() { return {}; }
    static AffineMatrix scaling(T sx, T sy) { return {{sx, 0, 0, 0, sy, 0}}; }

    T operator()(std::size_t r, std::size_t c) const { return theta[r * 3 + c]; }

    bool finite() const
    {
        for (T v : theta)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    friend bool operator==(const AffineMatrix&, const AffineMatrix&) = default;
};

/// Source sample position (in input pixel units) for every output pixel.
template <class T = double>
struct SampleGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    GridSize input{};
    std::vector<T> x;
    std::vector<T> y;
};

namespace detail {

template <class T>
T normalized_coordinate(std::size_t i, std::size_t n)
{
    return n > 1 ? T{-1} + T{2} * static_cast<T>(i) / static_cast<T>(n - 1) : T{0};
}

template <class T>
T half_extent(std::size_t n)
{
    return static_cast<T>(n > 1 ? n - 1 : 0) / T{2};
}

} // namespace detail

/// Applies theta to the normalized output grid, then maps the result to input pixel units.
template <class T>
SampleGrid<T> affine_grid(const AffineMatrix<T>& theta, GridSize out, GridSize in)
{
    detail::require(out.height >= 1 && out.width >= 1, "affine_grid: output size must be positive");
    detail::require(theta.finite(), "affine_grid: theta has non-finite entries");
    SampleGrid<T> g;
    g.height = out.height;
    g.width = out.width;
    g.input = in;
    g.x.resize(out.height * out.width);
    g.y.resize(out.height * out.width);
    const T hx = detail::half_extent<T>(in.width), hy = detail::half_extent<T>(in.height);
    const auto& t = theta.theta;
    for (std::size_t i = 0; i < out.height; ++i) {
        const T yn = detail::normalized_coordinate<T>(i, out.height);
        for (std::size_t j = 0; j < out.width; ++j) {
            const T xn = detail::normalized_coordinate<T>(j, out.width);
            const T xs = t[0] * xn + t[1] * yn + t[2];
            const T ys = t[3] * xn + t[4] * yn + t[5];
            g.x[i * out.width + j] = (xs + T{1}) * hx;
            g.y[i * out.width + j] = (ys + T{1}) * hy;
        }
    }
    return g;
}

template <class T>
SampleGrid<T> affine_grid(const AffineMatrix<T>& theta, GridSize out)
{
    return affine_grid(theta, out, out);
}

/// Gradient with respect to theta given gradients at each grid position.
template <class T>
AffineMatrix<T> affine_grid_backward(const SampleGrid<T>& grid, std::span<const T> grad_x, std::span<const T> grad_y)
{
    AffineMatrix<T> g;
    g.theta.fill(T{0});
    const T hx = detail::half_extent<T>(grid.input.width), hy = detail::half_extent<T>(grid.input.height);
    for (std::size_t i = 0; i < grid.height; ++i) {
        const T yn = detail::normalized_coordinate<T>(i, grid.height);
        for (std::size_t j = 0; j < grid.width; ++j) {
            const T xn = detail::normalized_coordinate<T>(j, grid.width);
            const T gx = grad_x[i * grid.width + j] * hx;
            const T gy = grad_y[i * grid.width + j] * hy;
            g.theta[0] += gx * xn;
            g.theta[1] += gx * yn;
            g.theta[2] += gx;
            g.theta[3] += gy * xn;
            g.theta[4] += gy * yn;
            g.theta[5] += gy;
        }
    }
    return g;
}

/// Four-neighbour bilinear interpolation with zero padding outside the input.
template <class T>
Volume<T> bilinear_sample(const Volume<T>& values, const SampleGrid<T>& grid)
{
    detail::require_shape(grid.input == values.grid(), "bilinear_sample: grid built for input " +
                                                           to_string(grid.input) + ", values are " +
                                                           shape_string(values));
    const std::size_t c = values.channels();
    Volume<T> out(grid.height, grid.width, c);
    const auto h = static_cast<std::ptrdiff_t>(values.height()), w = static_cast<std::ptrdiff_t>(values.width());
    parallel_chunks(grid.height, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0 * grid.width; i < r1 * grid.width; ++i) {
            const T x = grid.x[i], y = grid.y[i];
            const T fx = std::floor(x), fy = std::floor(y);
            const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
            const T ax = x - fx, ay = y - fy;
            const T wts[4] = {(T{1} - ax) * (T{1} - ay), ax * (T{1} - ay), (T{1} - ax) * ay, ax * ay};
            const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
            auto dst = out.pixel(i);
            for (int n = 0; n < 4; ++n) {
                if (xs[n] < 0 || ys[n] < 0 || xs[n] >= w || ys[n] >= h || wts[n] == T{0})
                    continue;
                auto src = values.pixel(static_cast<std::size_t>(ys[n]), static_cast<std::size_t>(xs[n]));
                for (std::size_t ch = 0; ch < c; ++ch)
                    dst[ch] += wts[n] * src[ch];
            }
        }
    });
    return out;
}

template <class T>
struct BilinearGradients {
    Volume<T> values;
    std::vector<T> grid_x;
    std::vector<T> grid_y;
};

template <class T>
BilinearGradients<T> bilinear_sample_backward(const Volume<T>& values, const SampleGrid<T>& grid,
                                              const Volume<T>& grad_out)
{
    BilinearGradients<T> g{Volume<T>(values.height(), values.width(), values.channels()),
                           std::vector<T>(grid.x.size(), T{0}), std::vector<T>(grid.y.size(), T{0})};
    const std::size_t c = values.channels();
    const auto h = static_cast<std::ptrdiff_t>(values.height()), w = static_cast<std::ptrdiff_t>(values.width());
    auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx, std::size_t ch) -> T {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h)
            return T{0};
        return values(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), ch);
    };
    for (std::size_t i = 0; i < grid.x.size(); ++i) {
        const T x = grid.x[i], y = grid.y[i];
        const T fx = std::floor(x), fy = std::floor(y);
        const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
        const T ax = x - fx, ay = y - fy;
        const T wts[4] = {(T{1} - ax) * (T{1} - ay), ax * (T{1} - ay), (T{1} - ax) * ay, ax * ay};
        const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
        auto go = grad_out.pixel(i);
        T gx{0}, gy{0};
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T v00 = at(y0, x0, ch), v01 = at(y0, x0 + 1, ch), v10 = at(y0 + 1, x0, ch),
                    v11 = at(y0 + 1, x0 + 1, ch);
            gx += go[ch] * ((T{1} - ay) * (v01 - v00) + ay * (v11 - v10));
            gy += go[ch] * ((T{1} - ax) * (v10 - v00) + ax * (v11 - v01));
        }
        g.grid_x[i] = gx;
        g.grid_y[i] = gy;
        for (int n = 0; n < 4; ++n) {
            if (xs[n] < 0 || ys[n] < 0 || xs[n] >= w || ys[n] >= h)
                continue;
            auto dst = g.values.pixel(static_cast<std::size_t>(ys[n]), static_cast<std::size_t>(xs[n]));
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[ch] += wts[n] * go[ch];
        }
    }
    return g;
}

/// Warp of values by theta onto a grid of the same size.
template <class T>
Volume<T> affine_warp(const Volume<T>& values, const AffineMatrix<T>& theta)
{
    return bilinear_sample(values, affine_grid(theta, values.grid()));
}

// ---------------------------------------------------------------------------------------------
// Localization head: average-pool the channel-concatenated (target, reference) descriptors to
// input_size x input_size, two [3x3 conv + ReLU + 2x2 average pool] stages, then dense -> ReLU ->
// dense(6). The last layer starts at zero weights with bias (1, 0, 0, 0, 1, 0).

template <class T = double>
struct LocalizationWeights {
    std::size_t input_size = 32;
    Tensor<T> conv0_kernel, conv0_bias;
    Tensor<T> conv1_kernel, conv1_bias;
    Tensor<T> fc0_weight, fc0_bias;
    Tensor<T> fc1_weight, fc1_bias;

    std::size_t input_channels() const { return conv0_kernel.dim(2); }

    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) { visit(*this, prefix, f); }
    template <class F>
    void for_each_tensor(const std::string& prefix, F&& f) const { visit(*this, prefix, f); }

private:
    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F& f)
    {
        f(prefix + ".conv0.kernel", self.conv0_kernel);
        f(prefix + ".conv0.bias", self.conv0_bias);
        f(prefix + ".conv1.kernel", self.conv1_kernel);
        f(prefix + ".conv1.bias", self.conv1_bias);
        f(prefix + ".fc0.weight", self.fc0_weight);
        f(prefix + ".fc0.bias", self.fc0_bias);
        f(prefix + ".fc1.weight", self.fc1_weight);
        f(prefix + ".fc1.bias", self.fc1_bias);
    }
};

struct LocalizationShape {
    std::size_t input_size = 32;
    std::size_t conv_channels0 = 16;
    std::size_t conv_channels1 = 16;
    std::size_t hidden = 32;
};

template <class T = double>
LocalizationWeights<T> make_localization(std::size_t in_channels, LocalizationShape shape, Rng& rng)
{
    detail::require(shape.input_size >= 4 && shape.input_size % 4 == 0,
                    "localization input size must be a positive multiple of 4");
    LocalizationWeights<T> w;
    w.input_size = shape.input_size;
    w.conv0_kernel = nn::conv_kernel<T>(3, in_channels, shape.conv_channels0, rng);
    w.conv0_bias = Tensor<T>({shape.conv_channels0});
    w.conv1_kernel = nn::conv_kernel<T>(3, shape.conv_channels0, shape.conv_channels1, rng);
    w.conv1_bias = Tensor<T>({shape.conv_channels1});
    const std::size_t pooled = shape.input_size / 4;
    const std::size_t flat = pooled * pooled * shape.conv_channels1;
    w.fc0_weight = nn::he_uniform<T>({flat, shape.hidden}, flat, rng);
    w.fc0_bias = Tensor<T>({shape.hidden});
    w.fc1_weight = Tensor<T>({shape.hidden, 6});
    w.fc1_bias = Tensor<T>({6});
    w.fc1_bias.data = {1, 0, 0, 0, 1, 0};
    return w;
}

template <class T>
struct LocalizationTrace {
    GridSize feature_grid{};
    std::size_t pool_factor = 1;
    Volume<T> pooled;
    Volume<T> conv0_out, act0, pool0;
    Volume<T> conv1_out, act1, pool1;
    Volume<T> fc0_out, hidden;
};

template <class T>
AffineMatrix<T> estimate_affine(const Volume<T>& target, const Volume<T>& reference, const LocalizationWeights<T>& w,
                                LocalizationTrace<T>* trace = nullptr)
{
    detail::require_shape(target.grid() == reference.grid(),
                          "estimate_affine: target " + shape_string(target) + " and reference " +
                              shape_string(reference) + " differ in spatial size");
    detail::require_shape(target.channels() + reference.channels() == w.input_channels(),
                          "estimate_affine: head expects " + std::to_string(w.input_channels()) +
                              " concatenated channels, got " +
                              std::to_string(target.channels() + reference.channels()));
    detail::require_shape(target.height() == target.width() && target.height() % w.input_size == 0,
                          "estimate_affine: features " + shape_string(target) + " cannot be pooled to " +
                              std::to_string(w.input_size));
    LocalizationTrace<T> local;
    LocalizationTrace<T>& t = trace ? *trace : local;
    t.feature_grid = target.grid();
    t.pool_factor = target.height() / w.input_size;
    t.pooled = nn::avg_pool(concat_channels(target, reference), t.pool_factor);
    t.conv0_out = nn::conv2d(t.pooled, w.conv0_kernel, w.conv0_bias, {1, 1});
    t.act0 = nn::relu(t.conv0_out);
    t.pool0 = nn::avg_pool(t.act0, 2);
    t.conv1_out = nn::conv2d(t.pool0, w.conv1_kernel, w.conv1_bias, {1, 1});
    t.act1 = nn::relu(t.conv1_out);
    t.pool1 = nn::avg_pool(t.act1, 2);
    t.fc0_out = nn::dense(t.pool1, w.fc0_weight, w.fc0_bias);
    t.hidden = nn::relu(t.fc0_out);
    const auto out = nn::dense(t.hidden, w.fc1_weight, w.fc1_bias);
    AffineMatrix<T> theta;
    for (std::size_t i = 0; i < 6; ++i)
        theta.theta[i] = out.values()[i];
    return theta;
}

/// Accumulates head weight gradients; returns (d target, d reference).
template <class T>
std::pair<Volume<T>, Volume<T>> localization_backward(const LocalizationTrace<T>& t, const LocalizationWeights<T>& w,
                                                      const AffineMatrix<T>& grad_theta, LocalizationWeights<T>& grads,
                                                      std::size_t target_channels)
{
    Volume<T> g(1, 1, 6);
    for (std::size_t i = 0; i < 6; ++i)
        g.values()[i] = grad_theta.theta[i];
    g = nn::dense_backward(t.hidden, w.fc1_weight, g, &grads.fc1_weight, &grads.fc1_bias);
    g = nn::relu_backward(t.fc0_out, g);
    g = nn::dense_backward(t.pool1, w.fc0_weight, g, &grads.fc0_weight, &grads.fc0_bias);
    g = nn::avg_pool_backward(t.act1.grid(), 2, g);
    g = nn::relu_backward(t.conv1_out, g);
    Volume<T> g_pool0;
    nn::conv2d_backward(t.pool0, w.conv1_kernel, {1, 1}, g, &grads.conv1_kernel, &grads.conv1_bias, &g_pool0);
    g = nn::avg_pool_backward(t.act0.grid(), 2, g_pool0);
    g = nn::relu_backward(t.conv0_out, g);
    Volume<T> g_pooled;
    nn::conv2d_backward(t.pooled, w.conv0_kernel, {1, 1}, g, &grads.conv0_kernel, &grads.conv0_bias, &g_pooled);
    auto g_cat = nn::avg_pool_backward(t.feature_grid, t.pool_factor, g_pooled);
    return {slice_channels(g_cat, 0, target_channels),
            slice_channels(g_cat, target_channels, g_cat.channels() - target_channels)};
}

} // namespace rht
