#pragma once

// Central finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rht/core/random.hpp"
#include "rht/core/volume.hpp"

namespace rht::check {

struct GradCheckOptions {
    double step = 1e-6;
    double rel_tol = 1e-4;
    /// Pairs whose absolute difference is below this pass regardless of relative error
    /// (both sides are round-off).
    double abs_floor = 1e-8;
    /// 0 checks every entry; otherwise this many entries chosen with the seed.
    std::size_t max_entries = 0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    std::string name;
    std::size_t checked = 0;
    std::size_t failures = 0;
    /// Entries accepted only because the difference is below the absolute floor.
    std::size_t floor_passes = 0;
    /// Over entries not accepted by the floor.
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;

    bool pass() const { return checked > 0 && failures == 0; }
};

inline bool gradient_close(double analytic, double numeric, const GradCheckOptions& o)
{
    const double diff = std::abs(analytic - numeric);
    return diff <= o.abs_floor || diff <= o.rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

inline std::vector<std::size_t> sample_indices(std::size_t n, const GradCheckOptions& o)
{
    std::vector<std::size_t> idx;
    if (o.max_entries == 0 || n <= o.max_entries) {
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            idx[i] = i;
        return idx;
    }
    Rng rng(o.seed ^ n);
    while (idx.size() < o.max_entries) {
        const auto i = rng.index(n);
        if (std::find(idx.begin(), idx.end(), i) == idx.end())
            idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Compares analytic[i] against (loss(x + h e_i) - loss(x - h e_i)) / 2h; x is restored afterwards.
inline GradCheckResult gradcheck(const std::string& name, std::span<double> x, std::span<const double> analytic,
                                 const std::function<double()>& loss, const GradCheckOptions& o = {})
{
    GradCheckResult r;
    r.name = name;
    if (x.size() != analytic.size()) {
        r.failures = 1;
        return r;
    }
    for (auto i : sample_indices(x.size(), o)) {
        const double saved = x[i];
        x[i] = saved + o.step;
        const double up = loss();
        x[i] = saved - o.step;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2 * o.step);
        const double diff = std::abs(analytic[i] - numeric);
        const double rel = diff / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-300});
        ++r.checked;
        const bool ok = gradient_close(analytic[i], numeric, o);
        const bool by_floor = ok && rel > o.rel_tol;
        if (!ok)
            ++r.failures;
        else if (by_floor)
            ++r.floor_passes;
        if (r.checked == 1 || (!by_floor && rel > r.max_rel_error)) {
            r.worst_index = i;
            r.worst_analytic = analytic[i];
            r.worst_numeric = numeric;
        }
        if (!by_floor)
            r.max_rel_error = std::max(r.max_rel_error, rel);
        r.max_abs_error = std::max(r.max_abs_error, diff);
    }
    return r;
}

/// Random projection weights so that loss = sum(w * out) has grad_out = w.
inline Volume<double> random_projection(std::size_t h, std::size_t w, std::size_t c, Rng& rng)
{
    Volume<double> v(h, w, c);
    for (auto& x : v.values())
        x = rng.uniform(-1, 1);
    return v;
}

inline double dot(const Volume<double>& a, const Volume<double>& b)
{
    double s = 0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i)
        s += av[i] * bv[i];
    return s;
}

inline std::string describe(const GradCheckResult& r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%s: %zu entries, %zu failures, %zu within floor, max rel %.3g, max abs %.3g (worst #%zu: %.10g vs %.10g)",
                  r.name.c_str(), r.checked, r.failures, r.floor_passes, r.max_rel_error, r.max_abs_error,
                  r.worst_index, r.worst_analytic, r.worst_numeric);
    return buf;
}

} // namespace rht::check
