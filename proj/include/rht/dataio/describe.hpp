#pragma once

// Reference selection: a 4x4 grid of 8-bin gradient-orientation histograms (128 values, L2
// normalized) ranked by cosine similarity. The similarity is a template parameter so another
// matcher can be plugged in.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/volume.hpp"
#include "rht/dataio/image.hpp"

namespace rht::dataio {

inline constexpr std::size_t descriptor_cells = 4;
inline constexpr std::size_t descriptor_bins = 8;
inline constexpr std::size_t descriptor_size = descriptor_cells * descriptor_cells * descriptor_bins;

struct Descriptor {
    std::vector<double> values; // cell-major: (cell_y, cell_x, bin)
    bool zero = false;          // no gradient anywhere
};

/// Central-difference gradients (one-sided at the border); the angle atan2(gy, gx) in [0, 2 pi) is
/// hard-binned into 45-degree sectors weighted by magnitude. Cell bounds are floor(k * side / 4).
inline Descriptor describe(const Volume<double>& image)
{
    rht::detail::require(image.height() >= 8 && image.width() >= 8,
                         "describe: image must be at least 8x8, got " + shape_string(image));
    const auto g = to_gray(image);
    const std::size_t h = g.height(), w = g.width();
    Descriptor d;
    d.values.assign(descriptor_size, 0.0);
    auto at = [&](std::size_t y, std::size_t x) { return g(y, x, 0); };
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t cy = y * descriptor_cells / h;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t cx = x * descriptor_cells / w;
            const std::size_t xl = x > 0 ? x - 1 : x, xr = x + 1 < w ? x + 1 : x;
            const std::size_t yu = y > 0 ? y - 1 : y, yd = y + 1 < h ? y + 1 : y;
            const double gx = (at(y, xr) - at(y, xl)) / static_cast<double>(xr - xl);
            const double gy = (at(yd, x) - at(yu, x)) / static_cast<double>(yd - yu);
            const double mag = std::hypot(gx, gy);
            if (mag == 0)
                continue;
            double angle = std::atan2(gy, gx);
            if (angle < 0)
                angle += 2 * std::numbers::pi;
            auto bin = static_cast<std::size_t>(angle / (std::numbers::pi / 4));
            if (bin >= descriptor_bins)
                bin = 0;
            d.values[(cy * descriptor_cells + cx) * descriptor_bins + bin] += mag;
        }
    }
    double ss = 0;
    for (double v : d.values)
        ss += v * v;
    if (ss == 0) {
        d.zero = true;
        return d;
    }
    const double n = std::sqrt(ss);
    for (double& v : d.values)
        v /= n;
    return d;
}

/// Cosine similarity; 0 when either side is all-zero.
struct CosineSimilarity {
    double operator()(std::span<const double> a, std::span<const double> b) const
    {
        rht::detail::require(a.size() == b.size(), "descriptor lengths differ");
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if (na == 0 || nb == 0)
            return 0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    }
};

struct ReferenceMatch {
    std::size_t index = 0;
    double similarity = 0;
};

/// Gallery entry with maximum similarity; ties go to the smallest index.
template <class Similarity = CosineSimilarity>
ReferenceMatch select_reference(const Descriptor& target, std::span<const Descriptor> gallery, Similarity sim = {})
{
    rht::detail::require(!gallery.empty(), "select_reference: empty gallery");
    ReferenceMatch best{0, sim(target.values, gallery[0].values)};
    for (std::size_t i = 1; i < gallery.size(); ++i) {
        const double s = sim(target.values, gallery[i].values);
        if (s > best.similarity)
            best = {i, s};
    }
    return best;
}

} // namespace rht::dataio
