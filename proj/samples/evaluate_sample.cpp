// Scores noisy predictions against ground truth with the 68-point convention and prints the
// cumulative error curve summary.

#include <cstdio>

#include "rht/rht.hpp"

int main()
{
    const auto conv = rht::dataio::default_convention_68();
    rht::Rng rng(3);
    std::vector<std::string> names;
    std::vector<double> nmes;
    for (int i = 0; i < 20; ++i) {
        std::vector<rht::Point2> truth(68), pred(68);
        for (std::size_t m = 0; m < 68; ++m) {
            truth[m] = {rng.uniform(20, 108), rng.uniform(20, 108)};
            const double noise = 0.5 + 0.25 * i;
            pred[m] = {truth[m].x + rng.uniform(-noise, noise), truth[m].y + rng.uniform(-noise, noise)};
        }
        const auto t = rht::LandmarkSet::visible_points(truth);
        const auto p = rht::LandmarkSet::visible_points(pred);
        names.push_back("face" + std::to_string(i));
        nmes.push_back(rht::nme(p, t, conv.normalization(rht::NormalizationKind::interocular)));
    }
    const auto report = rht::evaluate(names, nmes);
    std::printf("%s\n", rht::to_json(report).dump(2).c_str());
    return 0;
}
