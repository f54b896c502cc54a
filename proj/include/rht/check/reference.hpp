#pragma once

// Straightforward loop implementations used by the self-check battery as oracles for the
// optimized kernels.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/stm.hpp"

namespace rht::check::reference {

/// C by the triple loop, then D and A by a scan with strict comparison.
inline CorrelationArtifacts<double> correlate(const PatchMatrix<double>& q, const PatchMatrix<double>& k)
{
    CorrelationArtifacts<double> a;
    a.rows = q.rows;
    a.cols = k.rows;
    a.C.assign(q.rows * k.rows, 0.0);
    a.D.assign(q.rows, 0);
    a.A.assign(q.rows, 0.0);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < k.rows; ++j) {
            double s = 0;
            for (std::size_t d = 0; d < q.cols; ++d)
                s += q.data[i * q.cols + d] * k.data[j * k.cols + d];
            a.C[i * k.rows + j] = s;
        }
        for (std::size_t j = 0; j < k.rows; ++j)
            if (j == 0 || a.C[i * k.rows + j] > a.A[i]) {
                a.A[i] = a.C[i * k.rows + j];
                a.D[i] = j;
            }
    }
    return a;
}

/// Direct convolution, kernel [k][k][cin][cout], zero padding.
inline Volume<double> conv2d(const Volume<double>& in, const Tensor<double>& kernel, const Tensor<double>& bias,
                             std::size_t stride, std::size_t pad)
{
    const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
    const std::size_t oh = (in.height() + 2 * pad - k) / stride + 1, ow = (in.width() + 2 * pad - k) / stride + 1;
    Volume<double> out(oh, ow, cout);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t co = 0; co < cout; ++co) {
                double s = bias.data[co];
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        const long x = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (y < 0 || x < 0 || y >= static_cast<long>(in.height()) || x >= static_cast<long>(in.width()))
                            continue;
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            s += in(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ci) *
                                 kernel.data[((ky * k + kx) * cin + ci) * cout + co];
                    }
                out(oy, ox, co) = s;
            }
    return out;
}

/// Four-term bilinear formula at one sample position, zero outside.
inline double bilinear(const Volume<double>& v, double x, double y, std::size_t c)
{
    const double x0 = std::floor(x), y0 = std::floor(y);
    auto at = [&](double yy, double xx) {
        if (xx < 0 || yy < 0 || xx > static_cast<double>(v.width()) - 1 || yy > static_cast<double>(v.height()) - 1)
            return 0.0;
        return v(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
    };
    const double ax = x - x0, ay = y - y0;
    return (1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x0 + 1) + (1 - ax) * ay * at(y0 + 1, x0) +
           ax * ay * at(y0 + 1, x0 + 1);
}

inline double consistency_l1(const Volume<double>& fe, const Volume<double>& fs, std::span<const double> a)
{
    double s = 0;
    for (std::size_t y = 0; y < fe.height(); ++y)
        for (std::size_t x = 0; x < fe.width(); ++x)
            for (std::size_t c = 0; c < fe.channels(); ++c)
                s += std::abs(fe(y, x, c) * a[y * fe.width() + x] - fs(y, x, c));
    return s / static_cast<double>(fe.size());
}

} // namespace rht::check::reference
