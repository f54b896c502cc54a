// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when all pass.
//
//   rht_acceptance [--seed N] [--only K]

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "rht/check/selfcheck.hpp"

using namespace rht;
using namespace rht::check;

namespace {

struct Criterion {
    const char* name;
    double time_limit; // seconds; 0 for none
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv)
{
    std::uint64_t seed = 1;
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--seed") && i + 1 < argc)
            seed = std::strtoull(argv[++i], nullptr, 10);
        else if (!std::strcmp(argv[i], "--only") && i + 1 < argc)
            only = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--seed N] [--only K]\n", argv[0]);
            return 2;
        }
    }

    const std::vector<Criterion> criteria{
        {"correlation oracle equivalence", 30, [=] { return correlation_oracle(100, seed); }},
        {"self-reference identity", 0, [=] { return self_reference_identity(seed); }},
        {"affine identity and composition", 0, [=] { return affine_identity_and_composition(seed); }},
        {"gradient verification", 120, [=] { return kernel_gradients(seed, 0); }},
        {"render/decode round trip", 0, [=] { return render_decode_roundtrip(200, seed); }},
        {"metric golden values", 0, [=] { return metric_golden_values(seed); }},
        {"loss composition", 0, [=] { return loss_composition(seed); }},
        {"tiny-overfit smoke test", 60, [=] { return overfit_smoke(seed, 50, 50); }},
        {"shape contract (full scale)", 0, [=] { return shape_contract(ModelConfig::full(), seed); }},
        {"format round trips", 0, [=] { return format_roundtrips(50, seed); }},
    };

    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        if (only && static_cast<std::size_t>(only) != k + 1)
            continue;
        const auto& c = criteria[k];
        auto item = run_check(c.name, c.run);
        std::string detail = item.detail;
        if (item.pass && c.time_limit > 0 && item.seconds >= c.time_limit) {
            item.pass = false;
            detail += "; over the " + std::to_string(static_cast<int>(c.time_limit)) + " s budget";
        }
        failures += !item.pass;
        std::printf("%s  %2zu. %s (%s; %.1f s)\n", item.pass ? "PASS" : "FAIL", k + 1, c.name, detail.c_str(),
                    item.seconds);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
