// rht: command-line front end for rendering, transfer, fusion, evaluation and self-checks.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include "rht/check/selfcheck.hpp"
#include "rht/rht.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    bool json = false;
};

/// Failure that is not the caller's fault; maps to exit code 2.
struct InternalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(const Globals& g, const json& j, const std::string& text)
{
    if (g.json)
        std::cout << j.dump() << '\n';
    else
        std::cout << text << '\n';
}

rht::ModelConfig load_config(const std::string& path, const Globals& g)
{
    rht::ModelConfig c;
    if (!path.empty()) {
        json j;
        try {
            j = json::parse(rht::io::read_file(path));
        } catch (const json::exception& e) {
            throw rht::FormatError(path + ": " + e.what());
        }
        c = rht::config_from_json(j);
    }
    if (g.seed)
        c.seed = *g.seed;
    c.validate();
    return c;
}

rht::Model load_model(const std::string& config, const std::string& checkpoint, const Globals& g)
{
    auto model = rht::make_model(load_config(config, g));
    if (!checkpoint.empty())
        rht::load_params(checkpoint, model.params);
    return model;
}

/// Reads a PGM/PPM at the model's input size; grayscale is replicated to three channels.
rht::Volume<double> load_input_image(const std::string& path, std::size_t size)
{
    auto img = rht::dataio::read_image(path);
    if (img.height() != size || img.width() != size)
        throw rht::ShapeError(path + " is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                              ", the model expects " + std::to_string(size) + "x" + std::to_string(size));
    if (img.channels() == 3)
        return img;
    rht::Volume<double> rgb(size, size, 3);
    for (std::size_t i = 0; i < img.pixels(); ++i)
        for (auto& v : rgb.pixel(i))
            v = img.values()[i];
    return rgb;
}

rht::LandmarkSet load_landmarks(const std::string& path, std::size_t size)
{
    return rht::dataio::to_landmarks(rht::dataio::read_pts(path), {size, size});
}

std::optional<rht::dataio::LandmarkConvention> load_convention(const std::string& path)
{
    if (path.empty())
        return std::nullopt;
    json j;
    try {
        j = json::parse(rht::io::read_file(path));
    } catch (const json::exception& e) {
        throw rht::FormatError(path + ": " + e.what());
    }
    auto c = rht::dataio::convention_from_json(j.contains("convention") ? j.at("convention") : j);
    c.validate();
    return c;
}

struct PairInputs {
    std::string target, reference, reference_pts, reference_heatmaps, config, checkpoint;

    void add_to(CLI::App* cmd)
    {
        cmd->add_option("--target", target, "Target image (PGM/PPM)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--reference", reference, "Reference image (PGM/PPM)")->required()->check(CLI::ExistingFile);
        auto* pts = cmd->add_option("--reference-pts", reference_pts, "Reference annotation (.pts)")
                        ->check(CLI::ExistingFile);
        auto* hm = cmd->add_option("--reference-heatmaps", reference_heatmaps, "Reference heatmaps (RHM1)")
                       ->check(CLI::ExistingFile);
        pts->excludes(hm);
        cmd->add_option("--config", config, "Model config (JSON); quarter scale when omitted")
            ->check(CLI::ExistingFile);
        cmd->add_option("--checkpoint", checkpoint, "Parameter checkpoint (RHM1 with manifest)")
            ->check(CLI::ExistingFile);
    }

    rht::Intermediates run(const rht::Model& model) const
    {
        const auto& c = model.config;
        const std::size_t size = c.image_size();
        const auto t = load_input_image(target, size);
        const auto r = load_input_image(reference, size);
        rht::Volume<double> heatmaps;
        if (!reference_heatmaps.empty()) {
            heatmaps = rht::io::read_rhm1(reference_heatmaps);
        } else if (!reference_pts.empty()) {
            const auto lm = load_landmarks(reference_pts, size);
            if (lm.size() != c.landmarks)
                throw rht::InvalidArgument(reference_pts + " has " + std::to_string(lm.size()) +
                                           " points, the model expects " + std::to_string(c.landmarks));
            heatmaps = rht::render_heatmaps(lm, model.boundaries, {size, size}, c.sigma).data;
        } else {
            throw rht::InvalidArgument("one of --reference-pts or --reference-heatmaps is required");
        }
        return rht::forward(model, t, r, heatmaps);
    }
};

int cmd_render(const Globals& g, const std::string& pts, std::size_t size, double sigma, const std::string& boundaries,
               const std::string& out)
{
    const auto lm = load_landmarks(pts, size);
    rht::BoundaryDefinition b;
    if (const auto conv = load_convention(boundaries)) {
        if (conv->num_landmarks != lm.size())
            throw rht::InvalidArgument(pts + " has " + std::to_string(lm.size()) + " points, convention '" +
                                       conv->name + "' expects " + std::to_string(conv->num_landmarks));
        b = conv->boundaries;
    } else if (lm.size() == 68) {
        b = rht::dataio::default_convention_68().boundaries;
    }
    const auto stack = rht::render_heatmaps(lm, b, {size, size}, sigma);
    rht::io::write_rhm1(out, stack.data);
    emit(g,
         {{"command", "render"}, {"out", out}, {"height", size}, {"width", size}, {"channels", stack.channels()},
          {"landmarks", stack.landmark_channels}, {"boundaries", stack.boundary_channels}},
         "wrote " + out + " (" + rht::shape_string(stack.data) + ", " + std::to_string(stack.landmark_channels) +
             " landmark + " + std::to_string(stack.boundary_channels) + " boundary channels)");
    return 0;
}

int cmd_transfer(const Globals& g, const PairInputs& in, const std::string& out_dir)
{
    const auto model = load_model(in.config, in.checkpoint, g);
    const auto it = in.run(model);
    fs::create_directories(out_dir);
    json files = json::array();
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& sc = it.scales[s];
        const auto tag = rht::to_string(rht::all_scales[s]);
        rht::Volume<double> d(sc.fq.height(), sc.fq.width(), 1), a(sc.fq.height(), sc.fq.width(), 1);
        for (std::size_t i = 0; i < sc.art.D.size(); ++i) {
            d.values()[i] = static_cast<double>(sc.art.D[i]);
            a.values()[i] = sc.art.A[i];
        }
        const std::vector<std::pair<std::string, const rht::Volume<double>*>> outputs = {
            {"fs", &sc.fs}, {"fe", &sc.fe}, {"index", &d}, {"attention", &a}};
        for (const auto& [name, v] : outputs) {
            const auto path = fs::path(out_dir) / (name + "_" + tag + ".rhm1");
            rht::io::write_rhm1(path, *v);
            files.push_back(path.string());
        }
        const auto theta_path = fs::path(out_dir) / ("theta_" + tag + ".rhm1");
        rht::io::write_rhm1(theta_path, rht::io::theta_to_volume(sc.theta));
        files.push_back(theta_path.string());
        if (!g.json) {
            std::printf("%s: F_S/F_E %s, theta [%.6g %.6g %.6g; %.6g %.6g %.6g]\n", tag.c_str(),
                        rht::shape_string(sc.fs).c_str(), sc.theta.theta[0], sc.theta.theta[1], sc.theta.theta[2],
                        sc.theta.theta[3], sc.theta.theta[4], sc.theta.theta[5]);
        }
    }
    json hist = it.attention_histogram;
    emit(g, {{"command", "transfer"}, {"files", files}, {"attention_histogram", hist}},
         "wrote " + std::to_string(files.size()) + " files to " + out_dir);
    return 0;
}

int cmd_fuse(const Globals& g, const PairInputs& in, const std::string& out, const std::string& pts_out)
{
    const auto model = load_model(in.config, in.checkpoint, g);
    const auto it = in.run(model);
    rht::io::write_rhm1(out, it.output.data);
    json j = {{"command", "fuse"}, {"out", out}, {"shape", rht::shape_string(it.output.data)}};
    if (!pts_out.empty()) {
        rht::dataio::write_pts(pts_out, rht::dataio::to_pts(rht::decode_heatmaps(it.output)));
        j["pts_out"] = pts_out;
    }
    emit(g, j, "wrote " + out + " (" + rht::shape_string(it.output.data) + ")");
    return 0;
}

std::map<std::string, fs::path> pts_by_stem(const std::string& dir)
{
    if (!fs::is_directory(dir))
        throw rht::IoError("not a directory: " + dir);
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pts")
            out[e.path().stem().string()] = e.path();
    return out;
}

struct EvaluateArgs {
    std::string pred_dir, truth_dir, norm = "interocular", report, curve, manifest;
    double cutoff = rht::default_auc_cutoff;
    double threshold = rht::default_failure_threshold;
    bool visible_only = false;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a)
{
    const auto kind = rht::parse_normalization(a.norm);
    const bool box_norm = kind == rht::NormalizationKind::box_geomean || kind == rht::NormalizationKind::diag;
    const auto pred = pts_by_stem(a.pred_dir);
    const auto truth = pts_by_stem(a.truth_dir);

    std::vector<std::string> unmatched;
    for (const auto& [stem, _] : pred)
        if (!truth.contains(stem))
            unmatched.push_back(stem + " (prediction only)");
    for (const auto& [stem, _] : truth)
        if (!pred.contains(stem))
            unmatched.push_back(stem + " (truth only)");
    if (!unmatched.empty()) {
        std::string msg = "unmatched stems:";
        for (const auto& s : unmatched)
            msg += "\n  " + s;
        throw rht::InvalidArgument(msg);
    }
    if (truth.empty())
        throw rht::InvalidArgument("no .pts files in " + a.truth_dir);

    rht::dataio::LandmarkConvention convention = rht::dataio::default_convention_68();
    std::map<std::string, rht::dataio::DatasetEntry> entries;
    if (!a.manifest.empty()) {
        const auto m = rht::dataio::load_manifest(a.manifest);
        convention = m.convention;
        for (const auto& e : m.entries)
            entries[e.stem()] = e;
    }
    if (box_norm && a.manifest.empty())
        throw rht::InvalidArgument("--norm " + a.norm + " needs face boxes; pass a --manifest with a box per entry");

    std::vector<std::string> names;
    std::vector<double> nmes;
    for (const auto& [stem, truth_path] : truth) {
        auto t = rht::dataio::to_landmarks(rht::dataio::read_pts(truth_path));
        const auto p = rht::dataio::to_landmarks(rht::dataio::read_pts(pred.at(stem)));
        std::optional<rht::BoxSize> box;
        if (const auto e = entries.find(stem); e != entries.end()) {
            box = e->second.box;
            if (e->second.visibility)
                t.visibility = rht::dataio::parse_visibility(rht::io::read_file(*e->second.visibility), t.size());
        }
        if (box_norm && !box)
            throw rht::InvalidArgument("--norm " + a.norm + ": manifest has no box for '" + stem + "'");
        if (t.size() != convention.num_landmarks)
            throw rht::InvalidArgument(truth_path.string() + " has " + std::to_string(t.size()) +
                                       " points, convention '" + convention.name + "' expects " +
                                       std::to_string(convention.num_landmarks));
        names.push_back(stem);
        nmes.push_back(rht::nme(p, t, convention.normalization(kind, box), a.visible_only));
    }

    const auto report = rht::evaluate(names, nmes, a.cutoff, a.threshold);
    auto j = rht::to_json(report);
    j["normalization"] = rht::to_string(kind);
    if (!a.report.empty())
        rht::io::write_file(a.report, j.dump(2) + "\n");
    if (!a.curve.empty())
        rht::io::write_file(a.curve, rht::curve_csv(report.curve));
    if (g.json) {
        json line = {{"command", "evaluate"},
                     {"count", report.nmes.size()},
                     {"mean_nme", report.mean_nme},
                     {"auc", report.auc},
                     {"failure_rate", report.failure_rate}};
        std::cout << line.dump() << '\n';
    } else {
        std::printf("%zu images, NME %.6g (%s), AUC@%g %.6g, FR@%g %.6g\n", report.nmes.size(), report.mean_nme,
                    a.norm.c_str(), report.cutoff, report.auc, report.threshold, report.failure_rate);
    }
    return 0;
}

int cmd_selfcheck(const Globals& g)
{
    rht::check::SelfCheckOptions o;
    if (g.seed)
        o.seed = *g.seed;
    std::size_t failed = 0;
    rht::check::run_selfcheck(o, [&](const rht::check::CheckItem& item) {
        if (!item.pass)
            ++failed;
        if (g.json) {
            std::cout << json{{"check", item.name}, {"pass", item.pass}, {"detail", item.detail},
                              {"seconds", item.seconds}}
                             .dump()
                      << std::endl;
        } else {
            std::printf("%s  %s (%s; %.1f s)\n", item.pass ? "PASS" : "FAIL", item.name.c_str(), item.detail.c_str(),
                        item.seconds);
            std::fflush(stdout);
        }
    });
    return failed == 0 ? 0 : 2;
}

int cmd_visualize(const Globals& g, const std::string& in, std::size_t channel, const std::string& out)
{
    const auto v = rht::io::read_rhm1(in);
    rht::dataio::write_image(out, rht::dataio::normalized_channel(v, channel));
    emit(g, {{"command", "visualize"}, {"out", out}, {"channel", channel}, {"height", v.height()}, {"width", v.width()}},
         "wrote " + out + " (channel " + std::to_string(channel) + " of " + rht::shape_string(v) + ")");
    return 0;
}

int cmd_overfit(const Globals& g, const std::string& config, std::size_t steps, double lr, const std::string& out)
{
    if (!(lr >= 0))
        throw rht::InvalidArgument("--lr must be non-negative");
    auto model = rht::make_model(load_config(config, g));
    const auto sample = rht::make_synthetic_sample(model, model.config.seed);
    const auto r = rht::overfit_single(model, sample, steps, lr);
    std::string csv = "step,l1,l2,overall\n";
    char buf[128];
    for (std::size_t k = 0; k < r.reports.size(); ++k) {
        const auto& rep = r.reports[k];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", k, rep.l1, rep.l2, rep.overall);
        csv += buf;
    }
    if (!out.empty())
        rht::io::write_file(out, csv);
    const double initial = r.trace.front(), final_loss = r.trace.back();
    if (g.json) {
        std::cout << json{{"command", "overfit"},       {"steps", r.steps_run}, {"initial", initial},
                          {"final", final_loss},        {"ratio", final_loss / initial},
                          {"diverged", r.diverged}}
                         .dump()
                  << '\n';
    } else {
        if (out.empty())
            std::cout << csv;
        std::printf("initial %.6g, final %.6g after %zu steps (ratio %.4f)\n", initial, final_loss, r.steps_run,
                    final_loss / initial);
    }
    if (r.diverged)
        throw InternalFailure("training diverged at step " + std::to_string(r.steps_run) + " (loss " +
                              std::to_string(final_loss) + ", initial " + std::to_string(initial) + ")");
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Reference heatmap transformer tools"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Seed for model weights and synthetic data (overrides the config)");
    app.add_flag("--json", g.json, "Print machine-readable JSON lines");

    std::string pts, boundaries, out, in, config, pts_out, out_dir;
    std::size_t size = 128, channel = 0, steps = 50;
    double sigma = rht::default_sigma, lr = rht::default_overfit_lr;

    auto* render = app.add_subcommand("render", "Render landmark and boundary heatmaps from a .pts file");
    render->add_option("--pts", pts, "Annotation (.pts)")->required()->check(CLI::ExistingFile);
    render->add_option("--size", size, "Heatmap side length")->capture_default_str();
    render->add_option("--sigma", sigma, "Gaussian width in pixels")->capture_default_str();
    render->add_option("--boundaries", boundaries, "Landmark convention (JSON) defining the boundaries")
        ->check(CLI::ExistingFile);
    render->add_option("--out", out, "Output heatmaps (RHM1)")->required();

    PairInputs transfer_in, fuse_in;
    auto* transfer = app.add_subcommand("transfer", "Run STM and HTM on an image pair and write the artifacts");
    transfer_in.add_to(transfer);
    transfer->add_option("--out-dir", out_dir, "Directory for fs/fe/theta/index/attention files")->required();

    auto* fuse = app.add_subcommand("fuse", "Run the full forward pass and write predicted heatmaps");
    fuse_in.add_to(fuse);
    fuse->add_option("--out", out, "Output heatmaps (RHM1)")->required();
    fuse->add_option("--pts-out", pts_out, "Decoded landmarks (.pts)");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Score predicted .pts files against ground truth");
    evaluate->add_option("--pred-dir", ev.pred_dir, "Directory of predicted .pts files")->required();
    evaluate->add_option("--truth-dir", ev.truth_dir, "Directory of ground-truth .pts files")->required();
    evaluate->add_option("--norm", ev.norm, "interpupil | interocular | box_geomean | diag")->capture_default_str();
    evaluate->add_option("--report", ev.report, "Write the JSON report here");
    evaluate->add_option("--curve", ev.curve, "Write the cumulative curve CSV here");
    evaluate->add_option("--manifest", ev.manifest, "Dataset manifest (convention, boxes, visibility)")
        ->check(CLI::ExistingFile);
    evaluate->add_option("--cutoff", ev.cutoff, "AUC cutoff")->capture_default_str();
    evaluate->add_option("--threshold", ev.threshold, "Failure threshold")->capture_default_str();
    evaluate->add_flag("--visible-only", ev.visible_only, "Skip landmarks flagged invisible in the truth");

    auto* selfcheck = app.add_subcommand("selfcheck", "Run the invariant battery");

    auto* visualize = app.add_subcommand("visualize", "Write one RHM1 channel as a normalized PGM");
    visualize->add_option("--in", in, "Input volume (RHM1)")->required()->check(CLI::ExistingFile);
    visualize->add_option("--channel", channel, "Channel index")->capture_default_str();
    visualize->add_option("--out", out, "Output image (PGM)")->required();

    auto* overfit = app.add_subcommand("overfit", "Fit one synthetic sample and report the loss trace");
    overfit->add_option("--config", config, "Model config (JSON); quarter scale when omitted")
        ->check(CLI::ExistingFile);
    overfit->add_option("--steps", steps, "Gradient steps")->capture_default_str();
    overfit->add_option("--lr", lr, "Learning rate")->capture_default_str();
    overfit->add_option("--out", out, "Loss trace (CSV)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (app.count("--seed"))
        g.seed = seed;

    try {
        if (*render)
            return cmd_render(g, pts, size, sigma, boundaries, out);
        if (*transfer)
            return cmd_transfer(g, transfer_in, out_dir);
        if (*fuse)
            return cmd_fuse(g, fuse_in, out, pts_out);
        if (*evaluate)
            return cmd_evaluate(g, ev);
        if (*selfcheck)
            return cmd_selfcheck(g);
        if (*visualize)
            return cmd_visualize(g, in, channel, out);
        if (*overfit)
            return cmd_overfit(g, config, steps, lr, out);
    } catch (const rht::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const rht::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
