#pragma once

// Ground-truth landmark / boundary heatmap rendering and sub-pixel decoding.
//
// Pixel (row i, column j) sits at continuous coordinate (x = j, y = i); the origin is the centre
// of the top-left pixel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/core/parallel.hpp"
#include "rht/core/volume.hpp"

namespace rht {

struct Point2 {
    double x = 0;
    double y = 0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

struct ImageSize {
    std::size_t width = 0;
    std::size_t height = 0;

    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct LandmarkSet {
    std::vector<Point2> points;
    std::vector<std::uint8_t> visibility; // 1 visible, 0 invisible
    ImageSize image_size{};

    std::size_t size() const noexcept { return points.size(); }
    bool visible(std::size_t m) const { return visibility.at(m) != 0; }

    /// All points visible.
    static LandmarkSet visible_points(std::vector<Point2> pts, ImageSize size = {})
    {
        LandmarkSet s;
        s.visibility.assign(pts.size(), 1);
        s.points = std::move(pts);
        s.image_size = size;
        return s;
    }

    void validate() const
    {
        detail::require(!points.empty(), "landmark set is empty");
        detail::require(visibility.size() == points.size(),
                        "visibility has " + std::to_string(visibility.size()) + " flags for " +
                            std::to_string(points.size()) + " points");
        for (std::size_t m = 0; m < points.size(); ++m) {
            detail::require(std::isfinite(points[m].x) && std::isfinite(points[m].y),
                            "landmark " + std::to_string(m) + " has a non-finite coordinate");
            detail::require(visibility[m] <= 1, "visibility flag must be 0 or 1");
        }
    }
};

/// Ordered landmark-index sequences, one polyline per boundary.
struct BoundaryDefinition {
    std::vector<std::vector<std::size_t>> boundaries;

    std::size_t size() const noexcept { return boundaries.size(); }

    void validate(std::size_t landmark_count) const
    {
        for (std::size_t p = 0; p < boundaries.size(); ++p) {
            const auto& seq = boundaries[p];
            detail::require(seq.size() >= 2, "boundary " + std::to_string(p) + " has fewer than 2 landmarks");
            for (std::size_t i = 0; i < seq.size(); ++i) {
                detail::require(seq[i] < landmark_count, "boundary " + std::to_string(p) + " references landmark " +
                                                             std::to_string(seq[i]) + " but only " +
                                                             std::to_string(landmark_count) + " exist");
                detail::require(i == 0 || seq[i] != seq[i - 1],
                                "boundary " + std::to_string(p) + " repeats landmark " + std::to_string(seq[i]));
            }
        }
    }
};

/// H x W x (M + P) response maps: the first M channels are landmarks, the rest boundaries.
template <class T = double>
struct HeatmapStack {
    Volume<T> data;
    std::size_t landmark_channels = 0;
    std::size_t boundary_channels = 0;
    double sigma = 1.5;

    std::size_t channels() const noexcept { return data.channels(); }
    GridSize grid() const noexcept { return data.grid(); }
};

inline constexpr double default_sigma = 1.5;

namespace detail {

inline void check_render_args(GridSize out, double sigma)
{
    require(std::isfinite(sigma) && sigma > 0, "sigma must be positive, got " + std::to_string(sigma));
    require(out.height > 0 && out.width > 0, "output size must be positive");
}

inline double distance_to_segment(Point2 p, Point2 a, Point2 b)
{
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0;
    if (len2 > 0)
        t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
    const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
    return std::sqrt(ex * ex + ey * ey);
}

} // namespace detail

/// One Gaussian channel per landmark; invisible landmarks give all-zero channels.
inline HeatmapStack<double> render_landmark_heatmaps(const LandmarkSet& landmarks, GridSize out,
                                                      double sigma = default_sigma)
{
    detail::check_render_args(out, sigma);
    landmarks.validate();
    const std::size_t m_count = landmarks.size();
    HeatmapStack<double> stack{Volume<double>(out.height, out.width, m_count), m_count, 0, sigma};
    const double inv = 1.0 / (2.0 * sigma * sigma);
    parallel_for(m_count, [&](std::size_t m) {
        if (!landmarks.visible(m))
            return;
        const Point2 c = landmarks.points[m];
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) {
                const double dx = static_cast<double>(x) - c.x, dy = static_cast<double>(y) - c.y;
                stack.data(y, x, m) = std::exp(-(dx * dx + dy * dy) * inv);
            }
    });
    return stack;
}

/// Truncated Gaussian of the distance to each boundary polyline (exactly 0 beyond 3 sigma).
/// Invisible landmarks are dropped from the polyline before it is formed.
inline HeatmapStack<double> render_boundary_heatmaps(const LandmarkSet& landmarks,
                                                      const BoundaryDefinition& boundaries, GridSize out,
                                                      double sigma = default_sigma)
{
    detail::check_render_args(out, sigma);
    landmarks.validate();
    boundaries.validate(landmarks.size());
    const std::size_t p_count = boundaries.size();
    HeatmapStack<double> stack{Volume<double>(out.height, out.width, p_count), 0, p_count, sigma};
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const double cutoff = 3.0 * sigma;
    parallel_for(p_count, [&](std::size_t p) {
        std::vector<Point2> poly;
        for (auto idx : boundaries.boundaries[p])
            if (landmarks.visible(idx))
                poly.push_back(landmarks.points[idx]);
        if (poly.empty())
            return;
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) {
                const Point2 q{static_cast<double>(x), static_cast<double>(y)};
                double d = std::numeric_limits<double>::infinity();
                if (poly.size() == 1)
                    d = detail::distance_to_segment(q, poly[0], poly[0]);
                for (std::size_t s = 0; s + 1 < poly.size(); ++s)
                    d = std::min(d, detail::distance_to_segment(q, poly[s], poly[s + 1]));
                stack.data(y, x, p) = d > cutoff ? 0.0 : std::exp(-d * d * inv);
            }
    });
    return stack;
}

/// Landmark channels followed by boundary channels.
inline HeatmapStack<double> render_heatmaps(const LandmarkSet& landmarks, const BoundaryDefinition& boundaries,
                                             GridSize out, double sigma = default_sigma)
{
    auto lm = render_landmark_heatmaps(landmarks, out, sigma);
    auto bd = render_boundary_heatmaps(landmarks, boundaries, out, sigma);
    return {concat_channels(lm.data, bd.data), lm.landmark_channels, bd.boundary_channels, sigma};
}

enum class DecodeMethod {
    /// Quadratic fit of log intensities through the argmax row/column; exact on Gaussian peaks.
    log_parabola,
    /// Intensity-weighted centroid of the 3x3 window around the argmax.
    centroid,
};

namespace detail {

template <class T>
double window_centroid(const Volume<T>& v, std::size_t c, std::size_t py, std::size_t px, bool along_x)
{
    double sw = 0, s = 0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const auto y = static_cast<std::ptrdiff_t>(py) + dy, x = static_cast<std::ptrdiff_t>(px) + dx;
            if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(v.height()) ||
                x >= static_cast<std::ptrdiff_t>(v.width()))
                continue;
            const double w = std::max(0.0, static_cast<double>(v(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c)));
            sw += w;
            s += w * static_cast<double>(along_x ? x : y);
        }
    return sw > 0 ? s / sw : static_cast<double>(along_x ? px : py);
}

// Sub-pixel offset along one axis from the peak value and its two neighbours (nullopt = missing).
inline std::optional<double> log_fit_offset(std::optional<double> lo, double mid, std::optional<double> hi,
                                            double sigma)
{
    if (!(mid > 0))
        return std::nullopt;
    const double lm = std::log(mid);
    if (lo && hi) {
        if (!(*lo > 0) || !(*hi > 0))
            return std::nullopt;
        const double ll = std::log(*lo), lh = std::log(*hi);
        const double curvature = ll - 2 * lm + lh;
        if (!(curvature < 0))
            return std::nullopt;
        return std::clamp(0.5 * (ll - lh) / curvature, -1.0, 1.0);
    }
    // One neighbour clipped by the border: use the known kernel width instead of the curvature.
    if (hi && *hi > 0)
        return std::clamp(0.5 + sigma * sigma * (std::log(*hi) - lm), -1.0, 1.0);
    if (lo && *lo > 0)
        return std::clamp(-0.5 - sigma * sigma * (std::log(*lo) - lm), -1.0, 1.0);
    return std::nullopt;
}

} // namespace detail

/// Recovers one coordinate per landmark channel. Ties in the argmax go to the smallest row-major
/// index; a channel whose maximum is below 1e-6 decodes as invisible at (0, 0).
template <class T>
LandmarkSet decode_heatmaps(const HeatmapStack<T>& stack, DecodeMethod method = DecodeMethod::log_parabola)
{
    detail::require(stack.landmark_channels >= 1 && stack.landmark_channels <= stack.channels(),
                    "decode_heatmaps: stack has no landmark channels");
    const auto& v = stack.data;
    const std::size_t m_count = stack.landmark_channels;
    LandmarkSet out;
    out.points.assign(m_count, {});
    out.visibility.assign(m_count, 0);
    out.image_size = {v.width(), v.height()};
    for (std::size_t m = 0; m < m_count; ++m) {
        std::size_t best = 0;
        T best_value = v.pixel(0)[m];
        for (std::size_t i = 1; i < v.pixels(); ++i)
            if (v.pixel(i)[m] > best_value) {
                best_value = v.pixel(i)[m];
                best = i;
            }
        if (!(static_cast<double>(best_value) >= 1e-6))
            continue;
        const std::size_t py = best / v.width(), px = best % v.width();
        out.visibility[m] = 1;
        double x = detail::window_centroid(v, m, py, px, true);
        double y = detail::window_centroid(v, m, py, px, false);
        if (method == DecodeMethod::log_parabola) {
            auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> std::optional<double> {
                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(v.height()) ||
                    xx >= static_cast<std::ptrdiff_t>(v.width()))
                    return std::nullopt;
                return static_cast<double>(v(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), m));
            };
            const auto iy = static_cast<std::ptrdiff_t>(py), ix = static_cast<std::ptrdiff_t>(px);
            const double peak = static_cast<double>(best_value);
            if (auto dx = detail::log_fit_offset(at(iy, ix - 1), peak, at(iy, ix + 1), stack.sigma))
                x = static_cast<double>(px) + *dx;
            if (auto dy = detail::log_fit_offset(at(iy - 1, ix), peak, at(iy + 1, ix), stack.sigma))
                y = static_cast<double>(py) + *dy;
        }
        out.points[m] = {x, y};
    }
    return out;
}

} // namespace rht
