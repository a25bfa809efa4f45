#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "collabod/cten.hpp"
#include "collabod/eval.hpp"
#include "collabod/gradcheck_suite.hpp"
#include "collabod/model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace collabod;

namespace {

// Exit codes: 0 success, 1 a check failed, 2 bad invocation or input.
constexpr int kCheckFailed = 1;
constexpr int kUsageError = 2;

struct Common {
    std::uint64_t seed = 0;
    bool json = false;
};

// Writes to the named file, or stdout for "" and "-".
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary);
            if (!file_) throw Error("cannot write " + path);
        }
    }
    std::ostream& out() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw Error(what + " not found: " + path);
}

Model load_model(const std::string& config, const CLI::Option* seed_opt, std::uint64_t seed) {
    require_file(config, "config");
    ModelConfig cfg = load_config(config);
    if (seed_opt->count() > 0) cfg.seed = seed;
    return Model::build(cfg);
}

// ------------------------------------------------------------------ forward

struct ForwardArgs {
    std::string config, input, output, params, save_params, image_id;
    float iou = 0.45f, score = 0.25f;
    bool reparam = false;
};

int run_forward(const ForwardArgs& a, const Common& c, const CLI::Option* seed_opt) {
    Model model = load_model(a.config, seed_opt, c.seed);
    if (!a.params.empty()) {
        require_file(a.params, "parameter file");
        load_params_file(model, a.params);
    }
    if (a.reparam) model = model.reparameterized();
    if (!a.save_params.empty()) save_params_file(model, a.save_params);
    require_file(a.input, "input tensor");
    const Tensor image = cten::load(a.input);
    const HeadOutput out = model.forward(image);

    const std::string id = a.image_id.empty() ? fs::path(a.input).stem().string() : a.image_id;
    std::cerr << "# collabod forward config=" << a.config << " seed=" << model.config().seed
              << " iou_thresh=" << a.iou << " score_thresh=" << a.score << "\n";
    Sink sink(a.output);
    std::size_t count = 0;
    for (int b = 0; b < image.shape().n(); ++b) {
        const auto kept = nms(extract_detections(out, b, a.score), a.iou, a.score);
        const std::string name = image.shape().n() == 1 ? id : id + "#" + std::to_string(b);
        for (const Detection& d : kept) {
            sink.out() << eval::format_detection({name, d.box, d.class_id, d.score}) << "\n";
            ++count;
        }
    }
    std::cerr << "# " << count << " detections\n";
    return 0;
}

// -------------------------------------------------------------------- flops

int run_flops(const std::string& config, const Common& c, const CLI::Option* seed_opt) {
    const Model model = load_model(config, seed_opt, c.seed);
    const FlopsReport r = count_complexity(model);
    if (c.json) {
        json j;
        j["config"] = config;
        j["seed"] = model.config().seed;
        j["total_params"] = r.total_params;
        j["total_macs"] = r.total_macs;
        j["total_flops"] = r.total_flops();
        j["dominant_layer"] = r.dominant_layer;
        j["layers"] = json::array();
        for (const auto& l : r.layers)
            j["layers"].push_back({{"id", l.id}, {"kind", l.kind}, {"params", l.params}, {"macs", l.macs}});
        if (r.head) {
            const HeadComplexity& h = *r.head;
            j["head"] = {{"locations", h.locations},
                         {"shared_block_macs", h.shared_block_macs},
                         {"projection_macs", h.projection_macs},
                         {"dfl_macs", h.dfl_macs},
                         {"hidden_activations", h.hidden_activations},
                         {"logits", h.logits},
                         {"params", h.params}};
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << "# collabod flops config=" << config << " seed=" << model.config().seed << "\n";
    std::printf("%-12s %-10s %12s %16s\n", "layer", "kind", "params", "MACs");
    for (const auto& l : r.layers)
        std::printf("%-12s %-10s %12zu %16zu\n", l.id.c_str(), l.kind.c_str(), l.params, l.macs);
    std::printf("total params %zu\n", r.total_params);
    std::printf("total MACs %zu\n", r.total_macs);
    std::printf("total FLOPs %zu\n", r.total_flops());
    std::printf("dominant layer %s\n", r.dominant_layer.c_str());
    if (r.head) {
        const HeadComplexity& h = *r.head;
        std::printf("head: N=%zu shared=%zu projection=%zu dfl=%zu hidden_activations=%zu logits=%zu\n",
                    h.locations, h.shared_block_macs, h.projection_macs, h.dfl_macs, h.hidden_activations,
                    h.logits);
    }
    return 0;
}

// ---------------------------------------------------------------------- erf

struct ErfArgs {
    std::string config, probe, output;
    int samples = 8;
    double threshold = 0.2;
};

int run_erf(const ErfArgs& a, const Common& c, const CLI::Option* seed_opt) {
    const Model model = load_model(a.config, seed_opt, c.seed);
    const ErfMap map = estimate_erf(model, a.probe, a.samples, c.seed, a.threshold);
    if (!a.output.empty()) cten::save(a.output, map.magnitude);
    if (c.json) {
        json j{{"config", a.config},        {"probe", a.probe},         {"seed", map.seed},
               {"samples", map.samples},    {"threshold", map.threshold}, {"area_fraction", map.area_fraction},
               {"height", map.magnitude.shape().h()}, {"width", map.magnitude.shape().w()}};
        if (!a.output.empty()) j["output"] = a.output;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "# collabod erf config=" << a.config << " probe=" << a.probe << " seed=" << map.seed
                  << " samples=" << map.samples << "\n";
        std::cout << "threshold " << map.threshold << " of peak\n";
        std::cout << "area fraction " << fmt("%.6f", map.area_fraction) << "\n";
    }
    return 0;
}

// ------------------------------------------------------------ reparam-check

struct ReparamArgs {
    std::string config;
    int samples = 100;
    double tolerance = 1e-5;
    int channels = 32;
};

int run_reparam(const ReparamArgs& a, const Common& c, const CLI::Option* seed_opt) {
    Rng rng(c.seed);
    DetailConv detail;
    Shape probe{1, a.channels, 16, 16};
    std::optional<Model> model;
    if (!a.config.empty()) {
        model = load_model(a.config, seed_opt, c.seed);
        detail = model->head().detail;
        const auto& ext = model->anchors().extents.front();
        probe = Shape{1, detail.channels(), ext.first, ext.second};
    } else {
        detail = DetailConv::random(rng, a.channels);
    }
    if (detail.is_merged()) throw Error("reparam-check: head detail convolution is already merged");
    const DetailConv merged = reparameterize(detail);

    double worst = 0.0;
    for (int s = 0; s < a.samples; ++s) {
        const Tensor x = rng.uniform_tensor(probe, -1.0f, 1.0f);
        worst = std::max(worst, max_abs_diff(detail_forward(x, detail), detail_forward(x, merged)));
    }
    const std::size_t sites = static_cast<std::size_t>(probe.h()) * probe.w();
    auto conv_macs = [&](const ConvParams& p) {
        return sites * static_cast<std::size_t>(p.out_channels()) * p.kernel.shape().c() * p.kernel_h() *
               p.kernel_w();
    };
    std::size_t macs_before = 0;
    for (const auto& b : detail.branches) macs_before += conv_macs(b.conv);
    const std::size_t macs_after = conv_macs(*merged.merged);

    std::optional<double> model_diff;
    std::optional<std::size_t> model_before, model_after;
    if (model) {
        const Model rep = model->reparameterized();
        const Tensor image = rng.uniform_tensor(model->config().input, 0.0f, 1.0f);
        model_diff = max_abs_diff(model->forward(image).merged, rep.forward(image).merged);
        model_before = count_complexity(*model).total_macs;
        model_after = count_complexity(rep).total_macs;
    }
    const bool ok = worst <= a.tolerance && macs_after < macs_before &&
                    (!model_after || *model_after < *model_before);
    if (c.json) {
        json j{{"seed", c.seed},
               {"samples", a.samples},
               {"max_abs_diff", worst},
               {"tolerance", a.tolerance},
               {"branch_macs", macs_before},
               {"merged_macs", macs_after},
               {"passed", ok}};
        if (model) {
            j["config"] = a.config;
            j["model_max_abs_diff"] = *model_diff;
            j["model_macs_before"] = *model_before;
            j["model_macs_after"] = *model_after;
        }
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "# collabod reparam-check" << (model ? " config=" + a.config : std::string())
                  << " seed=" << c.seed << " samples=" << a.samples << "\n";
        std::cout << "detail max abs diff " << fmt("%.3e", worst) << " (tolerance " << fmt("%.1e", a.tolerance)
                  << ")\n";
        std::cout << "detail MACs " << macs_before << " -> " << macs_after << "\n";
        if (model) {
            std::cout << "model max abs diff " << fmt("%.3e", *model_diff) << "\n";
            std::cout << "model MACs " << *model_before << " -> " << *model_after << "\n";
        }
        std::cout << (ok ? "PASS" : "FAIL") << "\n";
    }
    return ok ? 0 : kCheckFailed;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
    std::string detections, ground_truth, output;
    std::size_t max_dets = 100;
};

int run_eval(const EvalArgs& a, const Common& c) {
    require_file(a.detections, "detections");
    require_file(a.ground_truth, "ground truth");
    const auto dets = eval::read_detections(a.detections);
    const auto gts = eval::read_ground_truth(a.ground_truth);
    eval::EvalOptions opts;
    opts.max_dets = a.max_dets;
    const eval::ApSummary s = eval::summarize(dets, gts, opts);
    Sink sink(a.output);
    if (c.json)
        sink.out() << eval::summary_json(s) << "\n";
    else
        sink.out() << "# collabod eval detections=" << a.detections << " gt=" << a.ground_truth
                   << " max_dets=" << a.max_dets << "\n"
                   << eval::summary_text(s);
    return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
    std::string op = "all";
    std::string config;
    int trials = 10;
    double tolerance = 1e-3;
    std::size_t coords = 16;
    double step = 0.5;
};

int run_gradcheck_cmd(const GradArgs& a, const Common& c, const CLI::Option* seed_opt) {
    struct Row {
        std::string target;
        double worst = 0.0;
        std::size_t checked = 0, skipped = 0;
    };
    std::vector<Row> rows;
    auto absorb = [](Row& r, const GradCheckReport& rep) {
        r.worst = std::max(r.worst, rep.max_rel_error());
        for (const auto& in : rep.inputs) {
            r.checked += in.checked;
            r.skipped += in.skipped;
        }
    };
    if (!a.config.empty()) {
        const Model model = load_model(a.config, seed_opt, c.seed);
        if (!model.has_head()) throw Error("gradcheck: config has no detection head");
        Row r{"model:" + model.config().name};
        for (int t = 0; t < a.trials; ++t) {
            Rng rng(c.seed + static_cast<std::uint64_t>(t));
            const std::vector<Tensor> image{rng.uniform_tensor(model.config().input, 0.0f, 1.0f)};
            GradCheckOptions opts;
            opts.seed = c.seed + static_cast<std::uint64_t>(t);
            opts.max_coords = a.coords;
            opts.step = a.step;
            opts.freeze_routing = true;
            absorb(r, check_gradients(
                          [&model](GradTape& tape, std::span<const Var> v) {
                              const Model::Trace tr = model.trace(tape, v[0]);
                              return tr.head->merged;
                          },
                          image, opts));
        }
        rows.push_back(r);
    } else {
        std::vector<std::string> targets;
        if (a.op == "all")
            targets = gradcheck_targets();
        else
            targets.push_back(a.op);
        for (const auto& name : targets) {
            Row r{name};
            for (int t = 0; t < a.trials; ++t) absorb(r, run_gradcheck(name, c.seed + static_cast<std::uint64_t>(t)));
            rows.push_back(r);
        }
    }
    bool ok = true;
    double worst = 0.0;
    for (const auto& r : rows) {
        ok = ok && r.worst <= a.tolerance;
        worst = std::max(worst, r.worst);
    }
    if (c.json) {
        json j{{"seed", c.seed}, {"trials", a.trials}, {"tolerance", a.tolerance}, {"max_rel_error", worst},
               {"passed", ok}, {"targets", json::array()}};
        for (const auto& r : rows)
            j["targets"].push_back({{"name", r.target},
                                    {"max_rel_error", r.worst},
                                    {"checked", r.checked},
                                    {"skipped", r.skipped},
                                    {"passed", r.worst <= a.tolerance}});
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "# collabod gradcheck seed=" << c.seed << " trials=" << a.trials << " tolerance "
                  << fmt("%.1e", a.tolerance) << "\n";
        for (const auto& r : rows)
            std::printf("%-24s max rel error %.3e  checked %zu  skipped %zu  %s\n", r.target.c_str(), r.worst,
                        r.checked, r.skipped, r.worst <= a.tolerance ? "ok" : "FAIL");
        std::cout << "max relative error " << fmt("%.3e", worst) << "\n" << (ok ? "PASS" : "FAIL") << "\n";
    }
    return ok ? 0 : kCheckFailed;
}

// ------------------------------------------------------------ random-tensor

int run_random_tensor(const std::string& shape_text, const std::string& output, float lo, float hi,
                      const Common& c) {
    Shape shape{1, 1, 1, 1};
    std::stringstream ss(shape_text);
    std::string part;
    std::vector<int> dims;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            dims.push_back(std::stoi(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw Error("--shape: '" + part + "' is not an integer");
        }
    }
    if (dims.empty() || dims.size() > 4) throw Error("--shape takes 1 to 4 comma-separated extents");
    for (std::size_t i = 0; i < dims.size(); ++i) shape.dims[4 - dims.size() + i] = dims[i];
    if (!shape.valid()) throw Error("--shape extents must be positive");
    Rng rng(c.seed);
    cten::save(output, rng.uniform_tensor(shape, lo, hi));
    std::cerr << "# collabod random-tensor shape=" << shape.str() << " seed=" << c.seed << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collabod: detection building blocks, complexity, ERF and COCO-style evaluation"};
    app.require_subcommand(1);
    Common common;

    auto add_common = [&](CLI::App* sub) {
        auto* seed = sub->add_option("--seed", common.seed, "random seed (default 0; overrides the config seed)");
        sub->add_flag("--json", common.json, "machine-readable JSON output");
        return seed;
    };

    ForwardArgs fwd;
    auto* forward = app.add_subcommand("forward", "run a model on a CTEN image and write detections (JSON lines)");
    forward->add_option("--config", fwd.config, "model config")->required();
    forward->add_option("--input", fwd.input, "CTEN image tensor")->required();
    forward->add_option("--output", fwd.output, "detections file (default stdout)");
    forward->add_option("--params", fwd.params, "CPAR parameter file to load");
    forward->add_option("--save-params", fwd.save_params, "write the model parameters to a CPAR file");
    forward->add_option("--image-id", fwd.image_id, "image id in the output (default: input file stem)");
    forward->add_option("--iou-thresh", fwd.iou, "NMS IoU threshold")->default_val(0.45);
    forward->add_option("--score-thresh", fwd.score, "score threshold")->default_val(0.25);
    forward->add_flag("--reparam", fwd.reparam, "merge the head detail branches before running");
    auto* forward_seed = add_common(forward);

    std::string flops_config;
    auto* flops = app.add_subcommand("flops", "parameter and MAC/FLOP counts per layer");
    flops->add_option("--config", flops_config, "model config")->required();
    auto* flops_seed = add_common(flops);

    ErfArgs erf_args;
    auto* erf = app.add_subcommand("erf", "effective receptive field of a feature layer");
    erf->add_option("--config", erf_args.config, "model config")->required();
    erf->add_option("--probe", erf_args.probe, "layer id to probe")->required();
    erf->add_option("--output", erf_args.output, "write the normalized map as CTEN");
    erf->add_option("--samples", erf_args.samples, "random input images averaged")->default_val(8);
    erf->add_option("--erf-thresh", erf_args.threshold, "area threshold as a fraction of the peak")
        ->default_val(0.2);
    auto* erf_seed = add_common(erf);

    ReparamArgs rep;
    auto* reparam = app.add_subcommand("reparam-check", "compare multi-branch and merged detail convolutions");
    reparam->add_option("--config", rep.config, "model config (default: a fresh standalone head convolution)");
    reparam->add_option("--samples", rep.samples, "random inputs compared")->default_val(100);
    reparam->add_option("--tol", rep.tolerance, "max abs diff tolerance")->default_val(1e-5);
    reparam->add_option("--channels", rep.channels, "width of the standalone detail convolution")->default_val(32);
    auto* reparam_seed = add_common(reparam);

    EvalArgs ev;
    auto* evaluate = app.add_subcommand("eval", "COCO-style AP of detections against ground truth");
    evaluate->add_option("--input", ev.detections, "detections (JSON lines)")->required();
    evaluate->add_option("--gt", ev.ground_truth, "ground truth (JSON lines)")->required();
    evaluate->add_option("--output", ev.output, "summary file (default stdout)");
    evaluate->add_option("--max-dets", ev.max_dets, "detections kept per image and class")->default_val(100);
    add_common(evaluate);

    GradArgs ga;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    auto* op_opt = gradcheck->add_option("--op", ga.op, "operator or block name, or 'all'")->default_val("all");
    gradcheck->add_option("--config", ga.config, "check the image gradient of a whole model instead")
        ->excludes(op_opt);
    gradcheck->add_option("--trials", ga.trials, "seeded trials")->default_val(10);
    gradcheck->add_option("--tol", ga.tolerance, "relative error tolerance")->default_val(1e-3);
    gradcheck->add_option("--coords", ga.coords, "sampled image coordinates per trial (--config)")
        ->default_val(16);
    gradcheck->add_option("--step", ga.step, "finite-difference step (--config)")->default_val(0.5);
    gradcheck->add_flag_callback("--list", [] {
        for (const auto& t : gradcheck_targets()) std::cout << t << "\n";
        std::exit(0);
    }, "list operator and block names");
    auto* grad_seed = add_common(gradcheck);

    std::string rt_shape, rt_output;
    float rt_lo = 0.0f, rt_hi = 1.0f;
    auto* rtensor = app.add_subcommand("random-tensor", "write a seeded uniform CTEN tensor");
    rtensor->add_option("--shape", rt_shape, "N,C,H,W")->required();
    rtensor->add_option("--output", rt_output, "CTEN file")->required();
    rtensor->add_option("--lo", rt_lo, "lower bound")->default_val(0.0);
    rtensor->add_option("--hi", rt_hi, "upper bound")->default_val(1.0);
    add_common(rtensor);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*forward) return run_forward(fwd, common, forward_seed);
        if (*flops) return run_flops(flops_config, common, flops_seed);
        if (*erf) return run_erf(erf_args, common, erf_seed);
        if (*reparam) return run_reparam(rep, common, reparam_seed);
        if (*evaluate) return run_eval(ev, common);
        if (*gradcheck) return run_gradcheck_cmd(ga, common, grad_seed);
        if (*rtensor) return run_random_tensor(rt_shape, rt_output, rt_lo, rt_hi, common);
    } catch (const std::exception& e) {
        std::cerr << "collabod: error: " << e.what() << "\n";
        return kUsageError;
    }
    return kUsageError;
}
