#pragma once

// Training augmentation: rotation, scale and crop jitter about the image centre, horizontal flip with
// the convention's index permutation, grayscale, 3x3 box blur and a random gray occluder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/random.hpp"
#include "rht/core/volume.hpp"
#include "rht/heatmaps.hpp"
#include "rht/htm.hpp"

namespace rht::dataio {

struct AugmentationPolicy {
    double rotation_max = 45.0; // degrees
    double scale_jitter = 0.20;
    double crop_jitter = 0.10;  // fraction of the side
    double gray_p = 0.20;
    double blur_p = 0.30;
    double occlusion_p = 0.40;
    double flip_p = 0.50;
    std::uint64_t rng_seed = 0;

    static AugmentationPolicy none()
    {
        return {0, 0, 0, 0, 0, 0, 0, 0};
    }

    void validate() const
    {
        for (double p : {gray_p, blur_p, occlusion_p, flip_p})
            rht::detail::require(p >= 0 && p <= 1, "augmentation probabilities must lie in [0, 1]");
        rht::detail::require(rotation_max >= 0 && rotation_max <= 180, "rotation_max must lie in [0, 180]");
        rht::detail::require(scale_jitter >= 0 && scale_jitter < 1, "scale_jitter must lie in [0, 1)");
        rht::detail::require(crop_jitter >= 0 && crop_jitter <= 0.5, "crop_jitter must lie in [0, 0.5]");
    }
};

struct Occluder {
    std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
    double value = 0;
};

/// One concrete set of augmentation parameters.
struct AugmentationDraw {
    double angle = 0;    // degrees, counter-clockwise in image coordinates
    double scale = 1;
    double shift_x = 0;  // fraction of width
    double shift_y = 0;  // fraction of height
    bool flip = false;
    bool gray = false;
    bool blur = false;
    std::optional<Occluder> occlusion;

    bool is_identity() const
    {
        return angle == 0 && scale == 1 && shift_x == 0 && shift_y == 0 && !flip && !gray && !blur && !occlusion;
    }
};

/// Forward point map (x, y) -> (a x + b y + c, d x + e y + f) in pixel coordinates.
struct PointMap {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    Point2 operator()(Point2 p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }

    PointMap inverse() const
    {
        const double det = m[0] * m[4] - m[1] * m[3];
        rht::detail::require(std::abs(det) > 1e-12, "augmentation map is singular");
        const double a = m[4] / det, b = -m[1] / det, d = -m[3] / det, e = m[0] / det;
        return {{a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])}};
    }
};

inline PointMap geometric_map(const AugmentationDraw& d, ImageSize size)
{
    const double cx = (static_cast<double>(size.width) - 1) / 2, cy = (static_cast<double>(size.height) - 1) / 2;
    const double rad = d.angle * std::numbers::pi / 180.0;
    const double cs = d.scale * std::cos(rad), sn = d.scale * std::sin(rad);
    const double tx = d.shift_x * static_cast<double>(size.width), ty = d.shift_y * static_cast<double>(size.height);
    PointMap p{{cs, sn, 0, -sn, cs, 0}};
    p.m[2] = cx + tx - (cs * cx + sn * cy);
    p.m[5] = cy + ty - (-sn * cx + cs * cy);
    if (d.flip) {
        const double w1 = static_cast<double>(size.width) - 1;
        p.m[0] = -p.m[0];
        p.m[1] = -p.m[1];
        p.m[2] = w1 - p.m[2];
    }
    return p;
}

inline AugmentationDraw draw_augmentation(const AugmentationPolicy& policy, Rng& rng, ImageSize size)
{
    policy.validate();
    AugmentationDraw d;
    d.angle = rng.uniform(-policy.rotation_max, policy.rotation_max);
    d.scale = rng.uniform(1 - policy.scale_jitter, 1 + policy.scale_jitter);
    d.shift_x = rng.uniform(-policy.crop_jitter, policy.crop_jitter);
    d.shift_y = rng.uniform(-policy.crop_jitter, policy.crop_jitter);
    d.flip = rng.bernoulli(policy.flip_p);
    d.gray = rng.bernoulli(policy.gray_p);
    d.blur = rng.bernoulli(policy.blur_p);
    // Always consume the occluder draws so later fields do not depend on the coin.
    const bool occlude = rng.bernoulli(policy.occlusion_p);
    const double side = static_cast<double>(std::min(size.width, size.height));
    Occluder o;
    o.width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rng.uniform(0.1, 0.3) * side)));
    o.height = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rng.uniform(0.1, 0.3) * side)));
    o.width = std::min(o.width, size.width);
    o.height = std::min(o.height, size.height);
    o.x0 = rng.index(size.width - o.width + 1);
    o.y0 = rng.index(size.height - o.height + 1);
    o.value = rng.uniform();
    if (occlude)
        d.occlusion = o;
    return d;
}

/// Resamples every channel through the geometric part of the draw (bilinear, zero outside).
inline Volume<double> warp_volume(const Volume<double>& v, const AugmentationDraw& d)
{
    const ImageSize size{v.width(), v.height()};
    const auto inv = geometric_map(d, size).inverse();
    SampleGrid<double> g;
    g.height = v.height();
    g.width = v.width();
    g.input = v.grid();
    g.x.resize(v.pixels());
    g.y.resize(v.pixels());
    for (std::size_t i = 0; i < v.height(); ++i)
        for (std::size_t j = 0; j < v.width(); ++j) {
            const auto s = inv({static_cast<double>(j), static_cast<double>(i)});
            g.x[i * v.width() + j] = s.x;
            g.y[i * v.width() + j] = s.y;
        }
    return bilinear_sample(v, g);
}

/// Moves landmarks with the image; flips reorder indices through the permutation. Points that
/// leave the frame become invisible.
inline LandmarkSet transform_landmarks(const LandmarkSet& lm, const AugmentationDraw& d, ImageSize size,
                                       const std::vector<std::size_t>& flip_permutation)
{
    const auto map = geometric_map(d, size);
    LandmarkSet out = lm;
    const double w1 = static_cast<double>(size.width) - 1, h1 = static_cast<double>(size.height) - 1;
    for (std::size_t m = 0; m < lm.size(); ++m) {
        const std::size_t src = d.flip && !flip_permutation.empty() ? flip_permutation.at(m) : m;
        out.points[m] = map(lm.points[src]);
        out.visibility[m] = lm.visibility[src];
        const auto& p = out.points[m];
        if (p.x < 0 || p.y < 0 || p.x > w1 || p.y > h1)
            out.visibility[m] = 0;
    }
    return out;
}

inline Volume<double> box_blur3(const Volume<double>& v)
{
    Volume<double> out(v.height(), v.width(), v.channels());
    const auto h = static_cast<std::ptrdiff_t>(v.height()), w = static_cast<std::ptrdiff_t>(v.width());
    for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < v.channels(); ++c) {
                double sum = 0;
                int n = 0;
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const auto sy = y + dy, sx = x + dx;
                        if (sy < 0 || sx < 0 || sy >= h || sx >= w)
                            continue;
                        sum += v(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
                        ++n;
                    }
                out(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = sum / n;
            }
    return out;
}

inline Volume<double> apply_photometric(Volume<double> img, const AugmentationDraw& d)
{
    if (d.gray && img.channels() == 3)
        for (std::size_t i = 0; i < img.pixels(); ++i) {
            auto p = img.pixel(i);
            const double l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            p[0] = p[1] = p[2] = l;
        }
    if (d.blur)
        img = box_blur3(img);
    if (d.occlusion) {
        const auto& o = *d.occlusion;
        for (std::size_t y = o.y0; y < std::min(o.y0 + o.height, img.height()); ++y)
            for (std::size_t x = o.x0; x < std::min(o.x0 + o.width, img.width()); ++x)
                for (auto& v : img.pixel(y, x))
                    v = o.value;
    }
    return img;
}

struct AugmentResult {
    Volume<double> image;
    LandmarkSet landmarks;
    AugmentationDraw draw;
    std::size_t attempts = 0;
    bool augmented = false; // false when every attempt was degenerate
};

inline constexpr std::size_t augmentation_attempts = 8;

/// Draws until at least one originally visible landmark stays in frame (up to 8 draws); otherwise
/// returns the inputs unchanged.
inline AugmentResult augment(const Volume<double>& image, const LandmarkSet& landmarks, const AugmentationPolicy& policy,
                             Rng& rng, const std::vector<std::size_t>& flip_permutation = {})
{
    landmarks.validate();
    rht::detail::require(!image.empty(), "augment: empty image");
    const ImageSize size{image.width(), image.height()};
    const bool any_visible = std::any_of(landmarks.visibility.begin(), landmarks.visibility.end(),
                                         [](std::uint8_t g) { return g != 0; });
    for (std::size_t attempt = 1; attempt <= augmentation_attempts; ++attempt) {
        const auto d = draw_augmentation(policy, rng, size);
        auto lm = transform_landmarks(landmarks, d, size, flip_permutation);
        const bool kept = std::any_of(lm.visibility.begin(), lm.visibility.end(), [](std::uint8_t g) { return g != 0; });
        if (any_visible && !kept)
            continue;
        return {apply_photometric(warp_volume(image, d), d), std::move(lm), d, attempt, true};
    }
    return {image, landmarks, AugmentationDraw{}, augmentation_attempts, false};
}

} // namespace rht::dataio
