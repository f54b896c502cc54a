#pragma once

// Landmark-detection evaluation: normalized mean error under four normalizations, the cumulative
// error curve with its normalized area, and failure rate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rht/core/error.hpp"
#include "rht/heatmaps.hpp"

namespace rht {

enum class NormalizationKind { interpupil, interocular, box_geomean, diag };

inline NormalizationKind parse_normalization(const std::string& s)
{
    if (s == "interpupil" || s == "ip")
        return NormalizationKind::interpupil;
    if (s == "interocular" || s == "io")
        return NormalizationKind::interocular;
    if (s == "box_geomean" || s == "box")
        return NormalizationKind::box_geomean;
    if (s == "diag")
        return NormalizationKind::diag;
    throw InvalidArgument("unknown normalization '" + s + "' (expected interpupil, interocular, box_geomean, diag)");
}

inline std::string to_string(NormalizationKind k)
{
    switch (k) {
    case NormalizationKind::interpupil: return "interpupil";
    case NormalizationKind::interocular: return "interocular";
    case NormalizationKind::box_geomean: return "box_geomean";
    case NormalizationKind::diag: return "diag";
    }
    return "?";
}

struct BoxSize {
    double width = 0;
    double height = 0;
};

/// Pupils are the centroids of the two index groups; eye corners are single indices.
struct NormalizationSpec {
    NormalizationKind kind = NormalizationKind::interocular;
    std::vector<std::size_t> left_pupil;
    std::vector<std::size_t> right_pupil;
    std::optional<std::size_t> left_corner;
    std::optional<std::size_t> right_corner;
    std::optional<BoxSize> box;

    static NormalizationSpec with_box(NormalizationKind kind, BoxSize b)
    {
        NormalizationSpec s;
        s.kind = kind;
        s.box = b;
        return s;
    }
};

/// Tight bounding box of the visible points.
inline BoxSize tight_box(const LandmarkSet& s)
{
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    for (std::size_t m = 0; m < s.size(); ++m) {
        if (!s.visible(m))
            continue;
        x0 = std::min(x0, s.points[m].x);
        x1 = std::max(x1, s.points[m].x);
        y0 = std::min(y0, s.points[m].y);
        y1 = std::max(y1, s.points[m].y);
    }
    detail::require(x0 <= x1, "tight_box: no visible points");
    return {x1 - x0, y1 - y0};
}

namespace detail {

inline Point2 centroid(const LandmarkSet& s, const std::vector<std::size_t>& idx)
{
    require(!idx.empty(), "pupil index group is empty");
    Point2 c{};
    for (auto i : idx) {
        require(i < s.size(), "pupil index " + std::to_string(i) + " out of range");
        c.x += s.points[i].x;
        c.y += s.points[i].y;
    }
    return {c.x / static_cast<double>(idx.size()), c.y / static_cast<double>(idx.size())};
}

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

} // namespace detail

/// The normalization term d computed from the ground truth.
inline double normalization_distance(const LandmarkSet& truth, const NormalizationSpec& spec)
{
    double d = 0;
    switch (spec.kind) {
    case NormalizationKind::interpupil:
        d = detail::distance(detail::centroid(truth, spec.left_pupil), detail::centroid(truth, spec.right_pupil));
        break;
    case NormalizationKind::interocular:
        detail::require(spec.left_corner && spec.right_corner, "interocular normalization needs eye-corner indices");
        detail::require(*spec.left_corner < truth.size() && *spec.right_corner < truth.size(),
                        "eye-corner index out of range");
        d = detail::distance(truth.points[*spec.left_corner], truth.points[*spec.right_corner]);
        break;
    case NormalizationKind::box_geomean:
        detail::require(spec.box.has_value(), "box_geomean normalization needs a bounding box");
        d = std::sqrt(spec.box->width * spec.box->height);
        break;
    case NormalizationKind::diag:
        detail::require(spec.box.has_value(), "diag normalization needs a bounding box");
        d = std::hypot(spec.box->width, spec.box->height);
        break;
    }
    detail::require(d > 0 && std::isfinite(d), "normalization distance must be positive");
    return d;
}

/// Mean over landmarks of the Euclidean error divided by d. With visible_only, landmarks invisible
/// in the ground truth are excluded from the mean.
inline double nme(const LandmarkSet& pred, const LandmarkSet& truth, const NormalizationSpec& norm,
                  bool visible_only = false)
{
    detail::require(pred.size() == truth.size(), "nme: prediction has " + std::to_string(pred.size()) +
                                                      " landmarks, truth has " + std::to_string(truth.size()));
    detail::require(!truth.points.empty(), "nme: empty landmark set");
    const double d = normalization_distance(truth, norm);
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t m = 0; m < truth.size(); ++m) {
        if (visible_only && !truth.visible(m))
            continue;
        sum += detail::distance(pred.points[m], truth.points[m]) / d;
        ++count;
    }
    detail::require(count > 0, "nme: no landmarks left to average");
    return sum / static_cast<double>(count);
}

/// Fraction of images with NME <= x at evenly spaced x in [0, cutoff].
struct CumulativeCurve {
    double cutoff = 0;
    std::vector<double> x;
    std::vector<double> fraction;
};

inline constexpr double default_auc_cutoff = 0.07;
inline constexpr double default_failure_threshold = 0.1;
inline constexpr std::size_t default_curve_steps = 1001;

namespace detail {
inline std::size_t count_above(std::span<const double> nmes, double t)
{
    return static_cast<std::size_t>(std::count_if(nmes.begin(), nmes.end(), [t](double v) { return v > t; }));
}
} // namespace detail

// Fractions are computed as 1 - (count above x) / n, which makes failure_rate(t) and
// 1 - curve(t) agree exactly at grid-aligned thresholds.
inline CumulativeCurve cumulative_curve(std::span<const double> nmes, double cutoff = default_auc_cutoff,
                                        std::size_t steps = default_curve_steps)
{
    detail::require(!nmes.empty(), "cumulative_curve: no NME values");
    detail::require(cutoff > 0 && std::isfinite(cutoff), "cumulative_curve: cutoff must be positive");
    detail::require(steps >= 2, "cumulative_curve: at least 2 steps are required");
    CumulativeCurve c;
    c.cutoff = cutoff;
    c.x.resize(steps);
    c.fraction.resize(steps);
    const double n = static_cast<double>(nmes.size());
    for (std::size_t k = 0; k < steps; ++k) {
        c.x[k] = k + 1 == steps ? cutoff : cutoff * static_cast<double>(k) / static_cast<double>(steps - 1);
        c.fraction[k] = 1.0 - static_cast<double>(detail::count_above(nmes, c.x[k])) / n;
    }
    return c;
}

/// Trapezoidal area under the curve divided by the cutoff.
inline double auc(const CumulativeCurve& c)
{
    detail::require(c.x.size() >= 2 && c.x.size() == c.fraction.size(), "auc: malformed curve");
    double area = 0;
    for (std::size_t k = 1; k < c.x.size(); ++k)
        area += 0.5 * (c.fraction[k] + c.fraction[k - 1]) * (c.x[k] - c.x[k - 1]);
    return area / c.cutoff;
}

/// Fraction of images with NME strictly above the threshold.
inline double failure_rate(std::span<const double> nmes, double threshold = default_failure_threshold)
{
    detail::require(!nmes.empty(), "failure_rate: no NME values");
    return static_cast<double>(detail::count_above(nmes, threshold)) / static_cast<double>(nmes.size());
}

struct EvaluationReport {
    std::vector<std::string> names;
    std::vector<double> nmes;
    double mean_nme = 0;
    double auc = 0;
    double cutoff = default_auc_cutoff;
    double failure_rate = 0;
    double threshold = default_failure_threshold;
    CumulativeCurve curve;
};

inline EvaluationReport evaluate(std::vector<std::string> names, std::vector<double> nmes,
                                 double cutoff = default_auc_cutoff, double threshold = default_failure_threshold,
                                 std::size_t steps = default_curve_steps)
{
    detail::require(names.size() == nmes.size(), "evaluate: names and NME values differ in length");
    EvaluationReport r;
    r.curve = cumulative_curve(nmes, cutoff, steps);
    double sum = 0;
    for (double v : nmes)
        sum += v;
    r.mean_nme = sum / static_cast<double>(nmes.size());
    r.auc = auc(r.curve);
    r.cutoff = cutoff;
    r.failure_rate = failure_rate(nmes, threshold);
    r.threshold = threshold;
    r.names = std::move(names);
    r.nmes = std::move(nmes);
    return r;
}

inline nlohmann::json to_json(const EvaluationReport& r)
{
    nlohmann::json per_image = nlohmann::json::array();
    for (std::size_t i = 0; i < r.names.size(); ++i)
        per_image.push_back({{"name", r.names[i]}, {"nme", r.nmes[i]}});
    return {{"count", r.nmes.size()}, {"mean_nme", r.mean_nme}, {"auc", r.auc},          {"auc_cutoff", r.cutoff},
            {"failure_rate", r.failure_rate}, {"failure_threshold", r.threshold}, {"per_image", per_image}};
}

/// Two-column CSV "x,fraction" for plotting.
inline std::string curve_csv(const CumulativeCurve& c)
{
    std::string out = "x,fraction\n";
    char buf[64];
    for (std::size_t k = 0; k < c.x.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", c.x[k], c.fraction[k]);
        out += buf;
    }
    return out;
}

} // namespace rht
