#pragma once

// Forward and backward kernels shared by the extractor, localization head, backbone and fusion
// module. Convolution kernels are stored as [kh][kw][cin][cout], dense matrices as [in][out].
// Backward functions accumulate (+=) into weight gradients so shared weights can be summed over
// several applications.

#include <cmath>
#include <cstddef>
#include <string>

#include "rht/core/error.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/random.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"

namespace rht::nn {

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t k, ConvGeometry g)
{
    detail::require_shape(in + 2 * g.pad >= k, "convolution window larger than padded input");
    return (in + 2 * g.pad - k) / g.stride + 1;
}

template <class T>
void check_conv_shapes(const char* who, const Volume<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias)
{
    detail::require_shape(kernel.shape.size() == 4 && kernel.dim(0) == kernel.dim(1),
                          std::string(who) + ": kernel must be k x k x cin x cout, got " + shape_string(kernel));
    detail::require_shape(kernel.dim(2) == in.channels(),
                          std::string(who) + ": kernel expects " + std::to_string(kernel.dim(2)) +
                              " input channels, input has " + std::to_string(in.channels()));
    detail::require_shape(bias.size() == kernel.dim(3),
                          std::string(who) + ": bias length " + std::to_string(bias.size()) +
                              " does not match " + std::to_string(kernel.dim(3)) + " output channels");
}

template <class T>
Volume<T> conv2d(const Volume<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias, ConvGeometry g)
{
    check_conv_shapes("conv2d", in, kernel, bias);
    const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
    const std::size_t oh = conv_output_extent(in.height(), k, g);
    const std::size_t ow = conv_output_extent(in.width(), k, g);
    Volume<T> out(oh, ow, cout);
    const T* w = kernel.data.data();
    parallel_chunks(oh, [&](std::size_t y0, std::size_t y1) {
        for (std::size_t oy = y0; oy < y1; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T* o = &out(oy, ox, 0);
                for (std::size_t co = 0; co < cout; ++co)
                    o[co] = bias.data[co];
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.height()))
                        continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.width()))
                            continue;
                        const T* ip = &in(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                        const T* wk = w + (ky * k + kx) * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const T a = ip[ci];
                            const T* wr = wk + ci * cout;
                            for (std::size_t co = 0; co < cout; ++co)
                                o[co] += a * wr[co];
                        }
                    }
                }
            }
    });
    return out;
}

/// Gradients of conv2d. grad_kernel / grad_bias are accumulated; grad_in (if non-null) is overwritten.
template <class T>
void conv2d_backward(const Volume<T>& in, const Tensor<T>& kernel, ConvGeometry g, const Volume<T>& grad_out,
                     Tensor<T>* grad_kernel, Tensor<T>* grad_bias, Volume<T>* grad_in)
{
    const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
    const std::size_t oh = grad_out.height(), ow = grad_out.width();
    detail::require_shape(grad_out.channels() == cout && oh == conv_output_extent(in.height(), k, g) &&
                              ow == conv_output_extent(in.width(), k, g),
                          "conv2d_backward: gradient shape " + shape_string(grad_out) + " does not match forward");
    if (grad_in)
        *grad_in = Volume<T>(in.height(), in.width(), cin);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const T* go = &grad_out(oy, ox, 0);
            if (grad_bias)
                for (std::size_t co = 0; co < cout; ++co)
                    grad_bias->data[co] += go[co];
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.height()))
                    continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.width()))
                        continue;
                    const auto sy = static_cast<std::size_t>(iy), sx = static_cast<std::size_t>(ix);
                    const T* ip = &in(sy, sx, 0);
                    const std::size_t base = (ky * k + kx) * cin * cout;
                    T* gi = grad_in ? &(*grad_in)(sy, sx, 0) : nullptr;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const T* wr = kernel.data.data() + base + ci * cout;
                        if (grad_kernel) {
                            T* gw = grad_kernel->data.data() + base + ci * cout;
                            const T a = ip[ci];
                            for (std::size_t co = 0; co < cout; ++co)
                                gw[co] += a * go[co];
                        }
                        if (gi) {
                            T s{0};
                            for (std::size_t co = 0; co < cout; ++co)
                                s += wr[co] * go[co];
                            gi[ci] += s;
                        }
                    }
                }
            }
        }
}

inline std::size_t conv_transpose_output_extent(std::size_t in, std::size_t k, ConvGeometry g)
{
    const std::size_t full = (in - 1) * g.stride + k;
    detail::require_shape(full > 2 * g.pad, "transposed convolution output would be empty");
    return full - 2 * g.pad;
}

/// Transposed convolution: the adjoint of conv2d with the same geometry, plus bias.
template <class T>
Volume<T> conv_transpose2d(const Volume<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias, ConvGeometry g)
{
    check_conv_shapes("conv_transpose2d", in, kernel, bias);
    const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
    const std::size_t oh = conv_transpose_output_extent(in.height(), k, g);
    const std::size_t ow = conv_transpose_output_extent(in.width(), k, g);
    Volume<T> out(oh, ow, cout);
    for (std::size_t i = 0; i < out.pixels(); ++i)
        for (std::size_t co = 0; co < cout; ++co)
            out.pixel(i)[co] = bias.data[co];
    for (std::size_t iy = 0; iy < in.height(); ++iy)
        for (std::size_t ix = 0; ix < in.width(); ++ix) {
            const T* ip = &in(iy, ix, 0);
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto oy = static_cast<std::ptrdiff_t>(iy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh))
                    continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ox = static_cast<std::ptrdiff_t>(ix * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow))
                        continue;
                    T* o = &out(static_cast<std::size_t>(oy), static_cast<std::size_t>(ox), 0);
                    const T* wk = kernel.data.data() + (ky * k + kx) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const T a = ip[ci];
                        const T* wr = wk + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co)
                            o[co] += a * wr[co];
                    }
                }
            }
        }
    return out;
}

template <class T>
void conv_transpose2d_backward(const Volume<T>& in, const Tensor<T>& kernel, ConvGeometry g,
                               const Volume<T>& grad_out, Tensor<T>* grad_kernel, Tensor<T>* grad_bias,
                               Volume<T>* grad_in)
{
    const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
    const std::size_t oh = grad_out.height(), ow = grad_out.width();
    detail::require_shape(grad_out.channels() == cout && oh == conv_transpose_output_extent(in.height(), k, g) &&
                              ow == conv_transpose_output_extent(in.width(), k, g),
                          "conv_transpose2d_backward: gradient shape " + shape_string(grad_out) +
                              " does not match forward");
    if (grad_bias)
        for (std::size_t i = 0; i < grad_out.pixels(); ++i)
            for (std::size_t co = 0; co < cout; ++co)
                grad_bias->data[co] += grad_out.pixel(i)[co];
    if (grad_in)
        *grad_in = Volume<T>(in.height(), in.width(), cin);
    for (std::size_t iy = 0; iy < in.height(); ++iy)
        for (std::size_t ix = 0; ix < in.width(); ++ix) {
            const T* ip = &in(iy, ix, 0);
            T* gi = grad_in ? &(*grad_in)(iy, ix, 0) : nullptr;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto oy = static_cast<std::ptrdiff_t>(iy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh))
                    continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ox = static_cast<std::ptrdiff_t>(ix * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow))
                        continue;
                    const T* go = &grad_out(static_cast<std::size_t>(oy), static_cast<std::size_t>(ox), 0);
                    const std::size_t base = (ky * k + kx) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const T* wr = kernel.data.data() + base + ci * cout;
                        if (grad_kernel) {
                            T* gw = grad_kernel->data.data() + base + ci * cout;
                            for (std::size_t co = 0; co < cout; ++co)
                                gw[co] += ip[ci] * go[co];
                        }
                        if (gi) {
                            T s{0};
                            for (std::size_t co = 0; co < cout; ++co)
                                s += wr[co] * go[co];
                            gi[ci] += s;
                        }
                    }
                }
            }
        }
}

template <class T>
Volume<T> relu(const Volume<T>& in)
{
    Volume<T> out = in;
    for (auto& v : out.values())
        v = v > T{0} ? v : T{0};
    return out;
}

/// Gradient of relu given its forward input.
template <class T>
Volume<T> relu_backward(const Volume<T>& pre_activation, const Volume<T>& grad_out)
{
    Volume<T> g = grad_out;
    auto pre = pre_activation.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i)
        if (!(pre[i] > T{0}))
            gv[i] = T{0};
    return g;
}

/// Per-channel y = x * scale[c] + shift[c].
template <class T>
Volume<T> channel_affine(const Volume<T>& in, const Tensor<T>& scale, const Tensor<T>& shift)
{
    detail::require_shape(scale.size() == in.channels() && shift.size() == in.channels(),
                          "channel_affine: parameter length does not match channel count");
    Volume<T> out(in.height(), in.width(), in.channels());
    for (std::size_t i = 0; i < in.pixels(); ++i)
        for (std::size_t c = 0; c < in.channels(); ++c)
            out.pixel(i)[c] = in.pixel(i)[c] * scale.data[c] + shift.data[c];
    return out;
}

template <class T>
Volume<T> channel_affine_backward(const Volume<T>& in, const Tensor<T>& scale, const Volume<T>& grad_out,
                                  Tensor<T>* grad_scale, Tensor<T>* grad_shift)
{
    Volume<T> grad_in(in.height(), in.width(), in.channels());
    for (std::size_t i = 0; i < in.pixels(); ++i)
        for (std::size_t c = 0; c < in.channels(); ++c) {
            const T g = grad_out.pixel(i)[c];
            grad_in.pixel(i)[c] = g * scale.data[c];
            if (grad_scale)
                grad_scale->data[c] += g * in.pixel(i)[c];
            if (grad_shift)
                grad_shift->data[c] += g;
        }
    return grad_in;
}

/// Non-overlapping factor x factor mean pooling; spatial size must be divisible by factor.
template <class T>
Volume<T> avg_pool(const Volume<T>& in, std::size_t factor)
{
    detail::require_shape(factor >= 1 && in.height() % factor == 0 && in.width() % factor == 0,
                          "avg_pool: " + shape_string(in) + " not divisible by " + std::to_string(factor));
    if (factor == 1)
        return in;
    Volume<T> out(in.height() / factor, in.width() / factor, in.channels());
    const T inv = T{1} / static_cast<T>(factor * factor);
    for (std::size_t y = 0; y < in.height(); ++y)
        for (std::size_t x = 0; x < in.width(); ++x)
            for (std::size_t c = 0; c < in.channels(); ++c)
                out(y / factor, x / factor, c) += in(y, x, c) * inv;
    return out;
}

template <class T>
Volume<T> avg_pool_backward(GridSize input, std::size_t factor, const Volume<T>& grad_out)
{
    if (factor == 1)
        return grad_out;
    Volume<T> g(input.height, input.width, grad_out.channels());
    const T inv = T{1} / static_cast<T>(factor * factor);
    for (std::size_t y = 0; y < input.height; ++y)
        for (std::size_t x = 0; x < input.width; ++x)
            for (std::size_t c = 0; c < g.channels(); ++c)
                g(y, x, c) = grad_out(y / factor, x / factor, c) * inv;
    return g;
}

/// Fully connected layer over the flattened grid; returns a 1 x 1 x out volume.
template <class T>
Volume<T> dense(const Volume<T>& in, const Tensor<T>& weight, const Tensor<T>& bias)
{
    detail::require_shape(weight.shape.size() == 2 && weight.dim(0) == in.size() && bias.size() == weight.dim(1),
                          "dense: weight " + shape_string(weight) + " incompatible with input of " +
                              std::to_string(in.size()) + " values");
    const std::size_t n_out = weight.dim(1);
    Volume<T> out(1, 1, n_out);
    auto o = out.values();
    for (std::size_t j = 0; j < n_out; ++j)
        o[j] = bias.data[j];
    auto x = in.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T* wr = weight.data.data() + i * n_out;
        for (std::size_t j = 0; j < n_out; ++j)
            o[j] += x[i] * wr[j];
    }
    return out;
}

template <class T>
Volume<T> dense_backward(const Volume<T>& in, const Tensor<T>& weight, const Volume<T>& grad_out,
                         Tensor<T>* grad_weight, Tensor<T>* grad_bias)
{
    const std::size_t n_out = weight.dim(1);
    auto g = grad_out.values();
    if (grad_bias)
        for (std::size_t j = 0; j < n_out; ++j)
            grad_bias->data[j] += g[j];
    Volume<T> grad_in(in.height(), in.width(), in.channels());
    auto x = in.values();
    auto gi = grad_in.values();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T* wr = weight.data.data() + i * n_out;
        T s{0};
        for (std::size_t j = 0; j < n_out; ++j) {
            s += wr[j] * g[j];
            if (grad_weight)
                grad_weight->data[i * n_out + j] += x[i] * g[j];
        }
        gi[i] = s;
    }
    return grad_in;
}

template <class T>
T logistic(T x)
{
    return T{1} / (T{1} + std::exp(-x));
}

template <class T>
Volume<T> logistic(const Volume<T>& in)
{
    Volume<T> out = in;
    for (auto& v : out.values())
        v = logistic(v);
    return out;
}

/// Gradient of the logistic given its output.
template <class T>
Volume<T> logistic_backward(const Volume<T>& output, const Volume<T>& grad_out)
{
    Volume<T> g = grad_out;
    auto y = output.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i)
        gv[i] *= y[i] * (T{1} - y[i]);
    return g;
}

/// Uniform He-style initialization: U(-a, a) with a = sqrt(6 / fan_in).
template <class T>
Tensor<T> he_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng)
{
    Tensor<T> t(std::move(shape));
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data)
        v = static_cast<T>(rng.uniform(-a, a));
    return t;
}

template <class T>
Tensor<T> conv_kernel(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng)
{
    return he_uniform<T>({k, k, cin, cout}, k * k * cin, rng);
}

} // namespace rht::nn
