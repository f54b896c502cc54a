// Builds a quarter-scale model, runs one forward pass on a synthetic pair, takes a few gradient
// steps and decodes the predicted landmarks.

#include <cstdio>

#include "rht/rht.hpp"

int main()
{
    auto cfg = rht::ModelConfig::quarter();
    cfg.seed = 7;
    auto model = rht::make_model(cfg);
    const auto sample = rht::make_synthetic_sample(model, 7);

    const auto it = rht::forward(model, sample);
    std::printf("output %s\n", rht::shape_string(it.output.data).c_str());
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& th = it.scales[s].theta.theta;
        std::printf("scale %s: F_E %s, theta [%.4f %.4f %.4f; %.4f %.4f %.4f]\n",
                    rht::to_string(rht::all_scales[s]).c_str(), rht::shape_string(it.scales[s].fe).c_str(), th[0],
                    th[1], th[2], th[3], th[4], th[5]);
    }

    const auto& vis = sample.target_landmarks.visibility;
    auto report = rht::evaluate_loss(model, it, sample.target_heatmaps, vis);
    std::printf("loss: L1 %.4f, L2 %.4f, overall %.4f\n", report.l1, report.l2, report.overall);

    const auto fit = rht::overfit_single(model, sample, 10);
    std::printf("after %zu steps: overall %.4f\n", fit.steps_run, fit.trace.back());

    const auto pred = rht::decode_heatmaps(rht::forward(model, sample).output);
    const auto spec = rht::NormalizationSpec::with_box(rht::NormalizationKind::box_geomean,
                                                       rht::tight_box(sample.target_landmarks));
    std::printf("NME (box): %.4f\n", rht::nme(pred, sample.target_landmarks, spec));
    return 0;
}
