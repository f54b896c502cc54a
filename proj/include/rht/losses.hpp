#pragma once

// Training objective: visibility-masked heatmap L2 loss, attention-weighted L1 consistency between
// the hard and soft transfers, and their weighted sum.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rht/core/error.hpp"
#include "rht/core/volume.hpp"
#include "rht/heatmaps.hpp"

namespace rht {

inline constexpr double default_lambda = 0.1;

struct LossReport {
    double l1 = 0;
    double l2 = 0;
    double overall = 0;
    double lambda = default_lambda;
};

inline void to_json(nlohmann::json& j, const LossReport& r)
{
    j = nlohmann::json{{"l1", r.l1}, {"l2", r.l2}, {"lambda", r.lambda}, {"overall", r.overall}};
}

inline void from_json(const nlohmann::json& j, LossReport& r)
{
    j.at("l1").get_to(r.l1);
    j.at("l2").get_to(r.l2);
    j.at("lambda").get_to(r.lambda);
    j.at("overall").get_to(r.overall);
}

inline LossReport overall_loss(double l1, double l2, double lambda = default_lambda)
{
    detail::require(l1 >= 0 && l2 >= 0, "overall_loss: loss terms must be non-negative");
    detail::require(std::isfinite(lambda) && lambda >= 0, "overall_loss: lambda must be non-negative");
    return {l1, l2, l1 + lambda * l2, lambda};
}

namespace detail {

template <class T>
void check_heatmap_pair(const HeatmapStack<T>& pred, const HeatmapStack<T>& truth, std::span<const std::uint8_t> vis)
{
    require_shape(pred.data.same_shape(truth.data), "heatmap_loss: prediction " + shape_string(pred.data) +
                                                        " vs truth " + shape_string(truth.data));
    require_shape(pred.landmark_channels == truth.landmark_channels &&
                      pred.boundary_channels == truth.boundary_channels &&
                      pred.landmark_channels + pred.boundary_channels == pred.channels(),
                  "heatmap_loss: channel roles differ between prediction and truth");
    require(pred.landmark_channels >= 1, "heatmap_loss: at least one landmark channel is required");
    require_shape(vis.size() == pred.landmark_channels, "heatmap_loss: visibility has " + std::to_string(vis.size()) +
                                                            " flags for " + std::to_string(pred.landmark_channels) +
                                                            " landmarks");
    for (auto g : vis)
        require(g <= 1, "heatmap_loss: visibility flags must be 0 or 1");
}

} // namespace detail

/// (1/N) sum_n [ (1/M) sum_m gamma * ||O - O*||^2 + (1/P) sum_p ||B - B*||^2 ]; the boundary term is
/// dropped when P = 0. Accumulation runs in row-major order for reproducibility.
template <class T>
double heatmap_loss(std::span<const HeatmapStack<T>> pred, std::span<const HeatmapStack<T>> truth,
                    std::span<const std::vector<std::uint8_t>> visibility)
{
    detail::require_shape(pred.size() == truth.size() && pred.size() == visibility.size() && !pred.empty(),
                          "heatmap_loss: batch sizes differ or are empty");
    double total = 0;
    for (std::size_t n = 0; n < pred.size(); ++n) {
        detail::check_heatmap_pair(pred[n], truth[n], visibility[n]);
        const std::size_t m_count = pred[n].landmark_channels, p_count = pred[n].boundary_channels;
        std::vector<double> per_channel(pred[n].channels(), 0.0);
        auto a = pred[n].data.values();
        auto b = truth[n].data.values();
        const std::size_t ch = pred[n].channels();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            per_channel[i % ch] += d * d;
        }
        double lm = 0, bd = 0;
        for (std::size_t m = 0; m < m_count; ++m)
            if (visibility[n][m])
                lm += per_channel[m];
        for (std::size_t p = 0; p < p_count; ++p)
            bd += per_channel[m_count + p];
        double term = lm / static_cast<double>(m_count);
        if (p_count > 0)
            term += bd / static_cast<double>(p_count);
        total += term;
    }
    return total / static_cast<double>(pred.size());
}

template <class T>
double heatmap_loss(const HeatmapStack<T>& pred, const HeatmapStack<T>& truth, const std::vector<std::uint8_t>& visibility)
{
    return heatmap_loss<T>(std::span<const HeatmapStack<T>>(&pred, 1), std::span<const HeatmapStack<T>>(&truth, 1),
                           std::span<const std::vector<std::uint8_t>>(&visibility, 1));
}

/// dLoss/dPred for one image of a batch of size batch_size: 2 (pred - truth) * mask / normalizers.
template <class T>
Volume<T> heatmap_loss_gradient(const HeatmapStack<T>& pred, const HeatmapStack<T>& truth,
                                const std::vector<std::uint8_t>& visibility, std::size_t batch_size = 1)
{
    detail::check_heatmap_pair(pred, truth, visibility);
    const std::size_t m_count = pred.landmark_channels, p_count = pred.boundary_channels, ch = pred.channels();
    std::vector<double> scale(ch, 0.0);
    for (std::size_t m = 0; m < m_count; ++m)
        scale[m] = visibility[m] ? 2.0 / (static_cast<double>(m_count) * static_cast<double>(batch_size)) : 0.0;
    for (std::size_t p = 0; p < p_count; ++p)
        scale[m_count + p] = 2.0 / (static_cast<double>(p_count) * static_cast<double>(batch_size));
    Volume<T> g(pred.data.height(), pred.data.width(), ch);
    auto a = pred.data.values();
    auto b = truth.data.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < a.size(); ++i)
        gv[i] = static_cast<T>(scale[i % ch] * (static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return g;
}

namespace detail {

template <class T>
void check_consistency_args(const Volume<T>& fe, const Volume<T>& fs, std::span<const T> attention)
{
    require_shape(fe.same_shape(fs), "consistency_loss: F_E " + shape_string(fe) + " vs F_S " + shape_string(fs));
    require_shape(attention.size() == fe.pixels(), "consistency_loss: attention has " +
                                                       std::to_string(attention.size()) + " entries for " +
                                                       std::to_string(fe.pixels()) + " positions");
    require(fe.size() > 0, "consistency_loss: empty features");
}

} // namespace detail

/// mean |fe * A - fs| with A broadcast over channels.
template <class T>
double consistency_loss(const Volume<T>& fe, const Volume<T>& fs, std::span<const T> attention)
{
    detail::check_consistency_args(fe, fs, attention);
    double sum = 0;
    const std::size_t c = fe.channels();
    auto e = fe.values();
    auto s = fs.values();
    for (std::size_t i = 0; i < e.size(); ++i)
        sum += std::abs(static_cast<double>(e[i]) * static_cast<double>(attention[i / c]) - static_cast<double>(s[i]));
    return sum / static_cast<double>(e.size());
}

template <class T>
struct ConsistencyGradients {
    Volume<T> fe;
    Volume<T> fs;
};

/// sign(fe * A - fs) * A / count for fe and -sign(.) / count for fs; A is a constant, sign(0) = 0.
template <class T>
ConsistencyGradients<T> consistency_loss_gradient(const Volume<T>& fe, const Volume<T>& fs, std::span<const T> attention,
                                                  double weight = 1.0)
{
    detail::check_consistency_args(fe, fs, attention);
    ConsistencyGradients<T> g{Volume<T>(fe.height(), fe.width(), fe.channels()),
                              Volume<T>(fs.height(), fs.width(), fs.channels())};
    const std::size_t c = fe.channels();
    const double inv = weight / static_cast<double>(fe.size());
    auto e = fe.values();
    auto s = fs.values();
    auto ge = g.fe.values();
    auto gs = g.fs.values();
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double a = static_cast<double>(attention[i / c]);
        const double r = static_cast<double>(e[i]) * a - static_cast<double>(s[i]);
        const double sg = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
        ge[i] = static_cast<T>(sg * a * inv);
        gs[i] = static_cast<T>(-sg * inv);
    }
    return g;
}

} // namespace rht
