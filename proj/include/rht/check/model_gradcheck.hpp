#pragma once

// Finite-difference verification of the end-to-end parameter gradients.
//
// Each tensor is checked along one random unit direction (covers every entry at once) and at
// its largest-magnitude gradient entries. The loss difference is accumulated term by term, and
// the model is first moved to a generic point: zero-initialized biases put many pre-activations
// exactly on a ReLU kink, and the identity-initialized localization head puts every sample point
// on a bilinear kink, where one-sided analytic derivatives and central differences disagree.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rht/check/gradcheck.hpp"
#include "rht/core/random.hpp"
#include "rht/pipeline.hpp"

namespace rht::check {

struct ModelGradCheckOptions {
    double step = 1e-6;
    double rel_tol = 1e-4;
    /// Round-off of a central difference is about eps * |loss| / step, ~7e-8 for a loss of several
    /// hundred; differences below the floor are indistinguishable from it.
    double abs_floor = 1e-8;
    std::size_t top_entries = 2;
    std::uint64_t seed = 5;
    /// Restrict to tensors whose name starts with this prefix; empty checks all.
    std::string prefix;
};

/// Adds small noise to every bias and shift, and to the final localization layer.
inline void move_to_generic_point(Model& model, std::uint64_t seed = 123)
{
    Rng rng(seed);
    model.params.for_each_tensor([&](const std::string& name, Tensor<double>& t) {
        const bool offset = name.ends_with(".bias") || name.ends_with(".shift");
        const bool head = name.find(".fc1.") != std::string::npos && name.starts_with("loc.");
        if (!offset && !head)
            return;
        const double amp = head ? 0.02 : 0.05;
        for (auto& x : t.data)
            x += rng.uniform(-amp, amp);
    });
}

/// Checks backward() against central differences of the overall loss. D and A are frozen at the
/// values of the unperturbed pass. `tamper`, when set, is applied to the model after the analytic
/// gradients are taken and before any difference is evaluated.
inline std::vector<GradCheckResult> check_model_gradients(Model& model, const Sample& sample,
                                                          const ModelGradCheckOptions& o = {},
                                                          const std::function<void(Model&)>& tamper = {})
{
    const auto& vis = sample.target_landmarks.visibility;
    const auto base = forward(model, sample);
    const auto frozen = artifacts_of(base);
    const auto grads = backward(model, base, sample.target_heatmaps, vis);
    if (tamper)
        tamper(model);
    ForwardOptions fo;
    fo.frozen_artifacts = &frozen;
    const GradCheckOptions tol{o.step, o.rel_tol, o.abs_floor, 0, o.seed};

    auto params = tensor_list(model.params);
    const auto g = tensor_list(grads);
    Rng rng(o.seed);
    std::vector<GradCheckResult> results;
    auto central = [&](const std::function<void(double)>& set) {
        set(o.step);
        const auto up = forward(model, sample, fo);
        set(-o.step);
        const auto down = forward(model, sample, fo);
        set(0);
        return loss_difference(model, up, down, sample.target_heatmaps, vis) / (2 * o.step);
    };
    auto record = [&](GradCheckResult& r, std::size_t index, double analytic, double numeric) {
        const double diff = std::abs(analytic - numeric);
        const double rel = diff / std::max({std::abs(analytic), std::abs(numeric), 1e-300});
        ++r.checked;
        const bool ok = gradient_close(analytic, numeric, tol);
        const bool by_floor = ok && rel > o.rel_tol;
        if (!ok)
            ++r.failures;
        else if (by_floor)
            ++r.floor_passes;
        if (r.checked == 1 || (!by_floor && rel > r.max_rel_error)) {
            r.worst_index = index;
            r.worst_analytic = analytic;
            r.worst_numeric = numeric;
        }
        if (!by_floor)
            r.max_rel_error = std::max(r.max_rel_error, rel);
        r.max_abs_error = std::max(r.max_abs_error, diff);
    };

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = *params[i].second;
        const auto& gt = *g[i].second;
        // Draw the direction even for skipped tensors so results do not depend on the filter.
        std::vector<double> u(t.size());
        double norm = 0;
        for (auto& x : u) {
            x = rng.uniform(-1, 1);
            norm += x * x;
        }
        if (!params[i].first.starts_with(o.prefix))
            continue;
        norm = std::sqrt(norm);
        double analytic = 0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            u[k] /= norm;
            analytic += u[k] * gt.data[k];
        }
        GradCheckResult r;
        r.name = params[i].first;
        const auto saved = t.data;
        // The directional entry is reported with index == tensor size.
        record(r, t.size(), analytic, central([&](double h) {
                   for (std::size_t k = 0; k < u.size(); ++k)
                       t.data[k] = saved[k] + h * u[k];
                   if (h == 0)
                       t.data = saved;
               }));

        std::vector<std::size_t> order(t.size());
        for (std::size_t k = 0; k < order.size(); ++k)
            order[k] = k;
        const std::size_t top = std::min(o.top_entries, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                          [&](std::size_t a, std::size_t b) { return std::abs(gt.data[a]) > std::abs(gt.data[b]); });
        for (std::size_t n = 0; n < top; ++n) {
            const std::size_t k = order[n];
            record(r, k, gt.data[k], central([&](double h) { t.data[k] = h == 0 ? saved[k] : saved[k] + h; }));
        }
        results.push_back(std::move(r));
    }
    return results;
}

} // namespace rht::check
