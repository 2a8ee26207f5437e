// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: render, train, gradcheck, bench, convert and synth.
// Exit codes: 0 ok, 1 usage, 2 invalid input, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "splat/config.hpp"
#include "splat/gradcheck.hpp"
#include "splat/image_io.hpp"
#include "splat/ply.hpp"
#include "splat/rasterizer.hpp"
#include "splat/scene_file.hpp"
#include "splat/synthetic.hpp"
#include "splat/trainer.hpp"

namespace fs = std::filesystem;
using namespace splat;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInvalid = 2, kNumerical = 3 };

constexpr double kAbsgradGrowGrad2d = 8e-4;

std::string target_name(const Scene &scene, std::size_t v) {
    if (!scene.images.empty() && !scene.images[v].empty()) {
        return scene.images[v];
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%03zu.ppm", v);
    return buf;
}

bool is_ply(const fs::path &p) { return p.extension() == ".ply" || p.extension() == ".PLY"; }

struct RenderArgs {
    std::string scene, out, depth, alpha;
    std::size_t camera = 0;
    bool aa = false;
    double blur = kDefaultBlur;
    int sh_degree = -1, threads = 0;
};

int cmd_render(const RenderArgs &a) {
    const Scene scene = load_scene(a.scene);
    if (a.camera >= scene.cameras.size()) {
        throw ValidationError("render: camera index " + std::to_string(a.camera) + " out of range (scene has " +
                              std::to_string(scene.cameras.size()) + ")");
    }
    if (scene.cloud.channels != 3) {
        throw ValidationError("render: PPM output needs a 3-channel scene");
    }
    const auto &cam = scene.cameras[a.camera];
    RenderSettings<double> settings;
    settings.mode = a.aa ? RasterMode::Antialiased : RasterMode::Classic;
    settings.blur = a.blur;
    settings.sh_degree = a.sh_degree;
    settings.threads = a.threads;
    const auto out = render(scene.cloud, cam, settings).output;
    write_ppm(a.out, out.color, cam.width, cam.height);
    if (!a.depth.empty()) {
        write_depth_pgm(a.depth, out.depth_exp);
    }
    if (!a.alpha.empty()) {
        write_depth_pgm(a.alpha, out.alpha, 1.0);
    }
    return kOk;
}

struct TrainArgs {
    std::string scene, targets, config, out_scene, log, strategy;
    bool pose_opt = false, absgrad = false, aa = false, no_wall = false, verbose = false;
    int iterations = -1, threads = -1;
    long long seed = -1;
};

int cmd_train(const TrainArgs &a) {
    const Scene scene = load_scene(a.scene);
    std::map<std::string, std::string> entries;
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        if (!in) {
            throw IoError("cannot read config " + a.config);
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        entries = parse_key_values(ss.str());
    }
    TrainConfig cfg;
    apply_config(entries, cfg);
    if (!a.strategy.empty()) {
        apply_config({{"strategy", a.strategy}}, cfg);
    }
    cfg.pose_opt = cfg.pose_opt || a.pose_opt;
    cfg.absgrad = cfg.absgrad || a.absgrad;
    if (cfg.absgrad && !entries.contains("grow-grad2d")) {
        cfg.adc.grow_grad2d = kAbsgradGrowGrad2d; // absolute sums run larger than signed ones
    }
    if (a.aa) {
        cfg.mode = RasterMode::Antialiased;
    }
    if (a.iterations >= 0) {
        cfg.iterations = a.iterations;
    }
    if (a.threads >= 0) {
        cfg.threads = a.threads;
    }
    if (a.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(a.seed);
    }
    std::vector<TrainView> views;
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const fs::path path = fs::path(a.targets) / target_name(scene, v);
        int w = 0, h = 0;
        TrainView view{scene.cameras[v], read_ppm(path, w, h)};
        if (w != view.camera.width || h != view.camera.height) {
            throw ValidationError("train: " + path.string() + " is " + std::to_string(w) + "x" + std::to_string(h) +
                                  " but camera " + std::to_string(v) + " is " + std::to_string(view.camera.width) +
                                  "x" + std::to_string(view.camera.height));
        }
        views.push_back(std::move(view));
    }
    StepCallback progress;
    if (a.verbose) {
        progress = [](const MetricRow &r) {
            if (r.step % 100 == 0) {
                std::fprintf(stderr, "step %d loss %.6f psnr %.3f n %lld\n", r.step, r.loss, r.psnr,
                             static_cast<long long>(r.num_gaussians));
            }
        };
    }
    const TrainResult res = train(scene.cloud, views, cfg, progress);
    Scene out;
    out.cloud = res.cloud;
    out.cameras = res.cameras;
    out.images = scene.images;
    save_scene(a.out_scene, out);
    if (!a.log.empty()) {
        std::ostringstream os;
        write_metric_log(os, res.log, !a.no_wall);
        write_file_atomic(a.log, os.str());
    }
    if (!res.log.empty()) {
        std::printf("final loss %.6f psnr %.3f gaussians %lld\n", res.log.back().loss, res.log.back().psnr,
                    static_cast<long long>(res.cloud.size()));
    }
    return kOk;
}

int cmd_gradcheck(const GradcheckOptions &opts) {
    const auto report = run_gradcheck(opts);
    for (const auto &s : report.scenes) {
        std::printf("scene %2d aa=%d depth=%d pose=%d sh=%d n=%lld checked=%lld failed=%lld max_rel=%.3e\n", s.scene,
                    s.antialias, s.depth_loss, s.pose, s.sh_degree, static_cast<long long>(s.gaussians),
                    static_cast<long long>(s.checked), static_cast<long long>(s.failed), s.max_rel_error);
    }
    for (const auto &f : report.failures) {
        std::printf("FAIL scene %d %s[%lld][%d] analytic %.10e numeric %.10e rel %.3e\n", f.scene, f.param.c_str(),
                    static_cast<long long>(f.gaussian), f.component, f.analytic, f.numeric, f.rel_error);
    }
    std::printf("gradcheck: %lld checks, %lld failed, %lld non-smooth, max rel error %.3e, %.1f s: %s\n",
                static_cast<long long>(report.checked), static_cast<long long>(report.failed),
                static_cast<long long>(report.non_smooth), report.max_rel_error, report.seconds,
                report.passed() ? "ok" : "FAILED");
    return report.passed() ? kOk : kNumerical;
}

struct BenchArgs {
    long long gaussians = 10000;
    std::string size = "256x256";
    int renders = 0, threads = 0;
    bool aa = false;
    std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs &a) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream ss(a.size);
    if (!(ss >> w >> x >> h) || x != 'x' || w < 1 || h < 1 || !ss.eof()) {
        throw ValidationError("bench: --size expects WxH, got '" + a.size + "'");
    }
    if (a.gaussians < 0) {
        throw ValidationError("bench: --gaussians must be non-negative");
    }
    std::mt19937_64 rng(a.seed);
    RandomCloudOptions opts;
    opts.spread = 1.0;
    opts.min_scale = 0.005;
    opts.max_scale = 0.05;
    const auto cloud = random_cloud(rng, a.gaussians, 3, opts);
    const auto cam = look_at(Vec3<double>(0, 0, -3), Vec3<double>::Zero(), Vec3<double>(0, -1, 0), 0.8 * std::max(w, h), w,
                             h);
    RenderSettings<double> settings;
    settings.mode = a.aa ? RasterMode::Antialiased : RasterMode::Classic;
    settings.threads = a.threads;
    render(cloud, cam, settings); // warm-up
    const auto start = std::chrono::steady_clock::now();
    int done = 0;
    double elapsed = 0;
    while ((a.renders > 0 && done < a.renders) || (a.renders <= 0 && (elapsed < 1.0 || done < 3))) {
        render(cloud, cam, settings);
        ++done;
        elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    std::printf("gaussians %lld size %dx%d threads %d: %.3f renders/sec (%d renders, %.3f s)\n", a.gaussians, w, h,
                worker_threads(a.threads), done / elapsed, done, elapsed);
    return kOk;
}

int cmd_convert(const std::string &in, const std::string &out) {
    Scene scene;
    if (is_ply(in)) {
        scene.cloud = import_ply(in);
    } else {
        scene = load_scene(in);
    }
    if (is_ply(out)) {
        export_ply(out, scene.cloud);
        if (!scene.cameras.empty()) {
            std::fprintf(stderr, "convert: %zu cameras dropped (PLY holds Gaussians only)\n", scene.cameras.size());
        }
    } else {
        save_scene(out, scene);
    }
    return kOk;
}

struct SynthArgs {
    std::string out_scene, targets, init_out;
    std::uint64_t seed = 0;
    int gaussians = 8, views = 17, size = 64;
    double perturb = 0.1;
};

int cmd_synth(const SynthArgs &a) {
    const auto toy = toy_scene(a.seed, a.gaussians, a.views, a.size);
    Scene scene{toy.cloud, toy.cameras, {}};
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        scene.images.push_back(target_name(Scene{}, v));
    }
    if (!a.targets.empty()) {
        fs::create_directories(a.targets);
        for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
            const auto out = render(scene.cloud, scene.cameras[v], RenderSettings<double>{}).output;
            write_ppm(fs::path(a.targets) / scene.images[v], out.color, a.size, a.size);
        }
    }
    save_scene(a.out_scene, scene);
    if (!a.init_out.empty()) {
        std::mt19937_64 rng(a.seed + 1);
        std::normal_distribution<double> n(0, 1);
        Scene init = scene;
        for (Index i = 0; i < init.cloud.size(); ++i) {
            for (int k = 0; k < 3; ++k) {
                init.cloud.means(i, k) += a.perturb * n(rng);
                init.cloud.raw_scales(i, k) += 3 * a.perturb * n(rng);
                init.cloud.sh(i, 0, k) += 5 * a.perturb * n(rng);
            }
            init.cloud.raw_opacities(i) = 0;
        }
        save_scene(a.init_out, init);
    }
    return kOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"splat: CPU Gaussian splatting renderer and trainer"};
    app.require_subcommand(1);

    RenderArgs ra;
    auto *render_cmd = app.add_subcommand("render", "Render one camera of a scene to a PPM image");
    render_cmd->add_option("--scene", ra.scene, "Scene file")->required();
    render_cmd->add_option("--camera-index", ra.camera, "Camera to render");
    render_cmd->add_option("--out", ra.out, "Output PPM")->required();
    render_cmd->add_flag("--aa", ra.aa, "Anti-aliased rasterization");
    render_cmd->add_option("--blur", ra.blur, "Screen-space dilation added to 2D covariances");
    render_cmd->add_option("--depth", ra.depth, "Also write expected depth as 16-bit PGM");
    render_cmd->add_option("--alpha", ra.alpha, "Also write alpha as 16-bit PGM (scale 1)");
    render_cmd->add_option("--sh-degree", ra.sh_degree, "SH degree (default: all stored bands)");
    render_cmd->add_option("--threads", ra.threads, "Worker threads (0 = all)");

    TrainArgs ta;
    auto *train_cmd = app.add_subcommand("train", "Optimize a scene against target images");
    train_cmd->add_option("--scene", ta.scene, "Initial scene file")->required();
    train_cmd->add_option("--targets", ta.targets, "Directory of target PPM images")->required();
    train_cmd->add_option("--config", ta.config, "key=value training config");
    train_cmd->add_option("--out-scene", ta.out_scene, "Optimized scene output")->required();
    train_cmd->add_flag("--pose-opt", ta.pose_opt, "Refine camera poses");
    train_cmd->add_option("--strategy", ta.strategy, "Densification strategy")
        ->check(CLI::IsMember({"adc", "mcmc", "none"}));
    train_cmd->add_flag("--absgrad", ta.absgrad, "Absolute-gradient densification criterion");
    train_cmd->add_flag("--aa", ta.aa, "Anti-aliased rasterization");
    train_cmd->add_option("--iterations", ta.iterations, "Override iteration count");
    train_cmd->add_option("--seed", ta.seed, "Override RNG seed");
    train_cmd->add_option("--threads", ta.threads, "Worker threads (0 = all)");
    train_cmd->add_option("--log", ta.log, "Write per-step metrics CSV");
    train_cmd->add_flag("--no-wall-time", ta.no_wall, "Leave wall-clock time out of the metrics CSV");
    train_cmd->add_flag("-v,--verbose", ta.verbose, "Print progress every 100 steps");

    GradcheckOptions go;
    auto *grad_cmd = app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
    grad_cmd->add_option("--seed", go.seed, "Scene seed");
    grad_cmd->add_option("--scenes", go.scenes, "Number of scenes")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--gaussians", go.max_gaussians, "Maximum Gaussians per scene")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--size", go.size, "Image side in pixels")->check(CLI::PositiveNumber);

    BenchArgs ba;
    auto *bench_cmd = app.add_subcommand("bench", "Measure forward render throughput");
    bench_cmd->add_option("--gaussians", ba.gaussians, "Number of Gaussians");
    bench_cmd->add_option("--size", ba.size, "Image size WxH");
    bench_cmd->add_option("--renders", ba.renders, "Fixed render count (default: run for 1 s)");
    bench_cmd->add_option("--threads", ba.threads, "Worker threads (0 = all)");
    bench_cmd->add_flag("--aa", ba.aa, "Anti-aliased rasterization");

    std::string conv_in, conv_out;
    auto *convert_cmd = app.add_subcommand("convert", "Convert between scene files and PLY (by extension)");
    convert_cmd->add_option("input", conv_in, "Input .json scene or .ply")->required();
    convert_cmd->add_option("output", conv_out, "Output .json scene or .ply")->required();

    SynthArgs sa;
    auto *synth_cmd = app.add_subcommand("synth", "Write a synthetic ground-truth scene and its target images");
    synth_cmd->add_option("--out-scene", sa.out_scene, "Ground-truth scene output")->required();
    synth_cmd->add_option("--targets", sa.targets, "Directory for rendered targets");
    synth_cmd->add_option("--init-out", sa.init_out, "Also write a perturbed copy for training");
    synth_cmd->add_option("--perturb", sa.perturb, "Perturbation scale for --init-out");
    synth_cmd->add_option("--seed", sa.seed, "Scene seed");
    synth_cmd->add_option("--gaussians", sa.gaussians, "Gaussian count")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--views", sa.views, "Camera count")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--size", sa.size, "Image side in pixels")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (*render_cmd) {
            return cmd_render(ra);
        }
        if (*train_cmd) {
            return cmd_train(ta);
        }
        if (*grad_cmd) {
            return cmd_gradcheck(go);
        }
        if (*bench_cmd) {
            return cmd_bench(ba);
        }
        if (*convert_cmd) {
            return cmd_convert(conv_in, conv_out);
        }
        if (*synth_cmd) {
            return cmd_synth(sa);
        }
    } catch (const NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    }
    return kUsage;
}
