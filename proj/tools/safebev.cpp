// Command-line driver: scene generation, training, inference, post-processing,
// certification harnesses and SVG rendering.
//
// Exit codes: 0 success, 1 usage/validation failure (including failed
// verification), 2 internal error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safebev/autodiff.hpp"
#include "safebev/certify.hpp"
#include "safebev/config.hpp"
#include "safebev/network.hpp"
#include "safebev/pipeline.hpp"
#include "safebev/postprocess.hpp"
#include "safebev/random.hpp"
#include "safebev/render.hpp"
#include "safebev/scenes.hpp"
#include "safebev/training.hpp"

using namespace safebev;

namespace {

class VerificationFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    return os;
}

Network load_net(const std::string& path, const RunConfig& cfg) {
    Network net = load_checkpoint(path);
    if (net.perturbation_index != cfg.perturbation_index) {
        std::cerr << "note: checkpoint perturbation index " << net.perturbation_index << " kept (config has "
                  << cfg.perturbation_index << ")\n";
    }
    return net;
}

const Scene& find_scene(const std::vector<Scene>& scenes, std::uint64_t id) {
    for (const auto& s : scenes) {
        if (s.id == id) return s;
    }
    throw std::invalid_argument("scene " + std::to_string(id) + " not found");
}

PipelineOptions pipeline_options(const RunConfig& cfg) {
    PipelineOptions p;
    p.critical = cfg.post();
    p.noncritical = {cfg.safety.class_threshold, cfg.nms_iou_threshold, PostMode::nms};
    p.caps = cfg.caps;
    return p;
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::size_t count = 0;
    std::string out;
};

int run_gen(const RunConfig& cfg, const GenArgs& a) {
    const auto scenes = generate(a.count, cfg.grid, cfg.safety, cfg.seed);
    write_scenes(scenes, a.out);
    std::cout << "wrote " << scenes.size() << " scenes to " << a.out << '\n';
    return 0;
}

struct TrainArgs {
    std::string scenes;
    std::string out;
    std::string init;
    std::string history;
};

int run_train(const RunConfig& cfg, const TrainArgs& a) {
    const auto samples = make_samples(read_scenes(a.scenes), cfg.grid);
    Network net;
    if (a.init.empty()) {
        net = make_detector(cfg.grid, cfg.net, cfg.seed);
        net.perturbation_index = cfg.perturbation_index;
    } else {
        net = load_net(a.init, cfg);
    }
    const TrainResult r = train(std::move(net), samples, cfg.train, cfg.safety, cfg.grid);
    save_checkpoint(r.net, a.out);

    std::ofstream file;
    std::ostream* hist = &std::cout;
    if (!a.history.empty()) {
        file = open_out(a.history);
        hist = &file;
    }
    for (std::size_t e = 0; e < r.history.size(); ++e) *hist << (e + 1) << ',' << format_real(r.history[e]) << '\n';
    if (!r.history.empty()) {
        std::cout << "final epoch loss: " << format_real(r.history.back()) << '\n';
    }
    std::cout << "checkpoint written to " << a.out << '\n';
    return 0;
}

struct InferArgs {
    std::string checkpoint;
    std::string scenes;
    std::string out;
    bool raw = false;
};

int run_infer(const RunConfig& cfg, const InferArgs& a) {
    const Network net = load_net(a.checkpoint, cfg);
    const auto scenes = read_scenes(a.scenes);
    const CriticalMask mask = critical_mask(cfg.safety, cfg.grid);
    const PipelineOptions popts = pipeline_options(cfg);
    std::vector<Detection> dets;
    std::size_t warnings = 0;
    for (const auto& s : scenes) {
        const PipelineResult r = run_pipeline(forward_exact(net, rasterize(s, cfg.grid), mask), cfg.grid, cfg.safety, popts);
        for (const auto& w : r.warnings) std::cerr << "warning: scene " << s.id << ' ' << w << '\n';
        warnings += r.warnings.size();
        std::vector<OrientedBox> boxes = r.final_boxes();
        if (a.raw) {
            boxes = r.enlarged_critical;
            boxes.insert(boxes.end(), r.raw_noncritical.begin(), r.raw_noncritical.end());
        }
        for (const auto& b : boxes) dets.push_back({s.id, b});
    }
    write_detections(dets, a.out);
    std::cout << "wrote " << dets.size() << " detections for " << scenes.size() << " scenes to " << a.out << '\n';
    if (warnings > 0) std::cout << "size-cap warnings: " << warnings << '\n';
    return 0;
}

struct PostArgs {
    std::string in;
    std::string out;
};

int run_post(const RunConfig& cfg, const PostArgs& a) {
    const auto dets = read_detections(a.in);
    std::map<std::uint64_t, std::vector<OrientedBox>> by_scene;
    for (const auto& d : dets) by_scene[d.scene].push_back(d.box);
    const PostConfig pc = cfg.post();
    std::vector<Detection> out;
    for (const auto& [scene, boxes] : by_scene) {
        for (const auto& b : postprocess(boxes, pc)) out.push_back({scene, b});
    }
    write_detections(out, a.out);
    std::cout << to_string(pc.mode) << ": " << dets.size() << " boxes in, " << out.size() << " boxes out\n";
    return 0;
}

struct BufferArgs {
    std::string checkpoint;
    std::string scenes;
    std::string out;
};

int run_buffers(const RunConfig& cfg, const BufferArgs& a) {
    const Network net = load_net(a.checkpoint, cfg);
    const auto scenes = read_scenes(a.scenes);
    const CriticalMask mask = critical_mask(cfg.safety, cfg.grid);
    std::vector<BufferRecord> records;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        const auto out = forward_exact(net, rasterize(scenes[k], cfg.grid), mask);
        const auto r = certify_buffers(out.critical, k, cfg.safety, cfg.grid);
        records.insert(records.end(), r.begin(), r.end());
    }
    auto os = open_out(a.out);
    write_buffer_records(records, os);
    std::cout << "kappa: " << format_real(cfg.safety.kappa) << '\n'
              << "buffer records: " << records.size() << " (closed form cross-checked by grid search)\n";
    return 0;
}

struct Lemma1Args {
    std::size_t trials = 100000;
    std::size_t configs = 1;
    double max_delta = 0.2;
    bool no_enlarge = false;
    std::string out;
};

int run_lemma1(const RunConfig& cfg, const Lemma1Args& a) {
    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!a.out.empty()) {
        file = open_out(a.out);
        os = &file;
    }
    std::size_t total = 0;
    for (std::size_t c = 0; c < a.configs; ++c) {
        SafetySpec spec = cfg.safety;
        if (a.configs > 1) {
            Rng rng(mix_seed(cfg.seed, c));
            for (double& d : spec.deltas) d = rng.uniform(0.0, a.max_delta);
            spec.kappa = kappa_conservative(spec.delta(2), spec.delta(3));
        }
        const std::size_t v = check_lemma1(a.trials, spec, mix_seed(cfg.seed, 1000 + c), {!a.no_enlarge});
        *os << "config " << c << ": deltas";
        for (double d : spec.deltas) *os << ' ' << format_real(d);
        *os << " kappa " << format_real(spec.kappa) << " trials " << a.trials << " violations " << v << '\n';
        total += v;
    }
    *os << "violations: " << total << '\n';
    if (os != &std::cout) std::cout << "violations: " << total << '\n';
    if (total > 0 && !a.no_enlarge) throw VerificationFailed("containment violated in " + std::to_string(total) + " trials");
    return 0;
}

struct Lemma2Args {
    std::string checkpoint;
    std::string scenes;
    std::optional<double> xi;
    std::size_t samples = 100;
    std::string out;
};

int run_lemma2(const RunConfig& cfg, const Lemma2Args& a) {
    const Network net = load_net(a.checkpoint, cfg);
    const auto data = make_samples(read_scenes(a.scenes), cfg.grid);
    const double xi = a.xi.value_or(cfg.train.xi);
    const Lemma2Report r =
        check_lemma2(net, data, xi, a.samples, cfg.safety, cfg.grid, cfg.seed, cfg.train.loss);
    std::ofstream file;
    if (!a.out.empty()) file = open_out(a.out);
    write_lemma2_report(r, std::cout, a.out.empty() ? nullptr : &file);
    if (r.violations() > 0) throw VerificationFailed("perturbation check found violations");
    return 0;
}

struct RenderArgs {
    std::string scenes;
    std::uint64_t scene_id = 0;
    std::string checkpoint;
    std::string detections;
    std::string out;
};

int run_render(const RunConfig& cfg, const RenderArgs& a) {
    const auto scenes = read_scenes(a.scenes);
    const Scene& scene = find_scene(scenes, a.scene_id);
    std::vector<RenderLayer> layers{{BoxRole::ground_truth, scene.vehicles}};
    if (!a.checkpoint.empty()) {
        const Network net = load_net(a.checkpoint, cfg);
        const auto out = forward_exact(net, rasterize(scene, cfg.grid), critical_mask(cfg.safety, cfg.grid));
        const PipelineResult r = run_pipeline(out, cfg.grid, cfg.safety, pipeline_options(cfg));
        layers.push_back({BoxRole::raw, r.raw_critical});
        layers.push_back({BoxRole::enlarged, r.enlarged_critical});
        layers.push_back({BoxRole::merged, r.merged_critical});
        layers.push_back({BoxRole::noncritical, r.kept_noncritical});
    }
    if (!a.detections.empty()) {
        RenderLayer l{BoxRole::merged, {}};
        for (const auto& d : read_detections(a.detections)) {
            if (d.scene == a.scene_id) l.boxes.push_back(d.box);
        }
        layers.push_back(std::move(l));
    }
    auto os = open_out(a.out);
    render_svg(os, cfg.grid, cfg.safety, layers, "scene " + std::to_string(a.scene_id));
    std::cout << "rendered scene " << a.scene_id << " to " << a.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safety-aware bird's-eye-view detector toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--set", sets, "override one key (key=value), repeatable")
        ->allow_extra_args(false);
    app.add_option("--seed", seed, "random seed (overrides the config)");

    // Subcommand flags that map onto config keys are applied last.
    std::vector<std::string> flag_overrides;
    auto key_option = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(
            flag, [&flag_overrides, key](const std::string& v) { flag_overrides.push_back(key + "=" + v); }, help);
    };

    std::function<int(const RunConfig&)> action;

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-scenes", "generate synthetic scenes");
    gen_cmd->add_option("--count", gen.count, "number of scenes")->required();
    gen_cmd->add_option("--out", gen.out, "scene file to write")->required();
    gen_cmd->callback([&] { action = [&](const RunConfig& c) { return run_gen(c, gen); }; });

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train or harden a detector");
    train_cmd->add_option("--scenes", tr.scenes, "scene file")->required();
    train_cmd->add_option("--out", tr.out, "checkpoint to write")->required();
    train_cmd->add_option("--init", tr.init, "checkpoint to start from (default: fresh network)");
    train_cmd->add_option("--history", tr.history, "write epoch,loss lines here instead of stdout");
    key_option(train_cmd, "--stage", "train.stage", "baseline, harden-v1 or harden-v2");
    key_option(train_cmd, "--epochs", "train.epochs", "number of epochs");
    key_option(train_cmd, "--xi", "train.xi", "feature perturbation radius (harden-v2)");
    key_option(train_cmd, "--lr", "train.learning_rate", "SGD learning rate");
    key_option(train_cmd, "--batch-size", "train.batch_size", "samples per SGD step");
    train_cmd->callback([&] { action = [&](const RunConfig& c) { return run_train(c, tr); }; });

    InferArgs inf;
    auto* infer_cmd = app.add_subcommand("infer", "run the detector and post-processing");
    infer_cmd->add_option("--checkpoint", inf.checkpoint, "network checkpoint")->required();
    infer_cmd->add_option("--scenes", inf.scenes, "scene file")->required();
    infer_cmd->add_option("--out", inf.out, "detection file to write")->required();
    infer_cmd->add_flag("--raw", inf.raw, "write boxes before post-processing (critical boxes enlarged)");
    key_option(infer_cmd, "--mode", "post.mode", "critical-area post-processing: nms, nmi, nmi-iterative");
    infer_cmd->callback([&] { action = [&](const RunConfig& c) { return run_infer(c, inf); }; });

    PostArgs post;
    auto* post_cmd = app.add_subcommand("postprocess", "apply nms / nmi to a detection file");
    post_cmd->add_option("--in", post.in, "detection file to read")->required();
    post_cmd->add_option("--out", post.out, "detection file to write")->required();
    key_option(post_cmd, "--mode", "post.mode", "nms, nmi or nmi-iterative");
    key_option(post_cmd, "--iou", "post.iou_threshold", "IoU cutoff (default depends on mode)");
    post_cmd->callback([&] { action = [&](const RunConfig& c) { return run_post(c, post); }; });

    BufferArgs buf;
    auto* buf_cmd = app.add_subcommand("certify-buffers", "buffer bounds for every critical cell");
    buf_cmd->add_option("--checkpoint", buf.checkpoint, "network checkpoint")->required();
    buf_cmd->add_option("--scenes", buf.scenes, "scene file")->required();
    buf_cmd->add_option("--out", buf.out, "CSV report to write")->required();
    buf_cmd->callback([&] { action = [&](const RunConfig& c) { return run_buffers(c, buf); }; });

    Lemma1Args l1;
    auto* l1_cmd = app.add_subcommand("verify-lemma1", "Monte-Carlo containment check of the buffer bounds");
    l1_cmd->add_option("--trials", l1.trials, "trials per tolerance configuration");
    l1_cmd->add_option("--configs", l1.configs, "random tolerance configurations (1: use the config's)");
    l1_cmd->add_option("--max-delta", l1.max_delta, "upper end of random tolerances");
    l1_cmd->add_flag("--no-enlarge", l1.no_enlarge, "skip enlargement (negative control)");
    l1_cmd->add_option("--out", l1.out, "report file");
    l1_cmd->callback([&] { action = [&](const RunConfig& c) { return run_lemma1(c, l1); }; });

    Lemma2Args l2;
    auto* l2_cmd = app.add_subcommand("verify-lemma2", "perturbation check of zero-robust-loss cells");
    l2_cmd->add_option("--checkpoint", l2.checkpoint, "network checkpoint")->required();
    l2_cmd->add_option("--scenes", l2.scenes, "scene file")->required();
    l2_cmd->add_option("--xi", l2.xi, "perturbation radius (default: train.xi)");
    l2_cmd->add_option("--samples", l2.samples, "perturbations per sample");
    l2_cmd->add_option("--out", l2.out, "per-cell CSV record");
    l2_cmd->callback([&] { action = [&](const RunConfig& c) { return run_lemma2(c, l2); }; });

    RenderArgs rd;
    auto* render_cmd = app.add_subcommand("render", "static SVG of one scene");
    render_cmd->add_option("--scenes", rd.scenes, "scene file")->required();
    render_cmd->add_option("--scene-id", rd.scene_id, "scene to draw");
    render_cmd->add_option("--checkpoint", rd.checkpoint, "draw predictions of this network");
    render_cmd->add_option("--detections", rd.detections, "draw boxes from a detection file");
    render_cmd->add_option("--out", rd.out, "SVG file to write")->required();
    render_cmd->callback([&] { action = [&](const RunConfig& c) { return run_render(c, rd); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        for (const auto& s : sets) apply_override(cfg, s);
        for (const auto& s : flag_overrides) apply_override(cfg, s);
        if (seed) cfg.seed = *seed;
        cfg.finalize();
        std::cout << "# resolved configuration\n" << describe(cfg) << "# end configuration\n";
        return action(cfg);
    } catch (const VerificationFailed& e) {
        std::cerr << "verification failed: " << e.what() << '\n';
        return 1;
    } catch (const ConsistencyError& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    } catch (const ad::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
}
