// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/gradcheck.hpp"

#include <chrono>
#include <random>

#include "splat/gradients.hpp"
#include "splat/synthetic.hpp"

namespace splat {

namespace {

struct Layout {
    Index n = 0;
    int sh = 0;
    bool pose = false;

    int per_gaussian() const { return 11 + sh; }
    Index size() const { return n * per_gaussian() + (pose ? 6 : 0); }
};

VecX<double> pack(const GaussianCloud<double> &c, const Layout &lay) {
    VecX<double> x = VecX<double>::Zero(lay.size());
    for (Index i = 0; i < lay.n; ++i) {
        auto seg = x.segment(i * lay.per_gaussian(), lay.per_gaussian());
        seg.segment<3>(0) = c.means.row(i).transpose();
        seg.segment<3>(3) = c.raw_scales.row(i).transpose();
        seg.segment<4>(6) = c.quats.row(i).transpose();
        seg(10) = c.raw_opacities(i);
        seg.tail(lay.sh) = c.sh_coeffs.row(i).transpose();
    }
    return x;
}

void unpack(const VecX<double> &x, const Layout &lay, GaussianCloud<double> &c, Vec6<double> &xi) {
    for (Index i = 0; i < lay.n; ++i) {
        const auto seg = x.segment(i * lay.per_gaussian(), lay.per_gaussian());
        c.means.row(i) = seg.segment<3>(0).transpose();
        c.raw_scales.row(i) = seg.segment<3>(3).transpose();
        c.quats.row(i) = seg.segment<4>(6).transpose();
        c.raw_opacities(i) = seg(10);
        c.sh_coeffs.row(i) = seg.tail(lay.sh).transpose();
    }
    xi = lay.pose ? Vec6<double>(x.tail<6>()) : Vec6<double>::Zero();
}

VecX<double> pack_grads(const BackwardResult<double> &g, const Layout &lay) {
    VecX<double> x = VecX<double>::Zero(lay.size());
    for (Index i = 0; i < lay.n; ++i) {
        auto seg = x.segment(i * lay.per_gaussian(), lay.per_gaussian());
        seg.segment<3>(0) = g.cloud.means.row(i).transpose();
        seg.segment<3>(3) = g.cloud.raw_scales.row(i).transpose();
        seg.segment<4>(6) = g.cloud.quats.row(i).transpose();
        seg(10) = g.cloud.raw_opacities(i);
        seg.tail(lay.sh) = g.cloud.sh_coeffs.row(i).transpose();
    }
    if (lay.pose) {
        x.tail<6>() = g.pose.local;
    }
    return x;
}

void describe(const Layout &lay, Index k, GradcheckEntry &e) {
    if (lay.pose && k >= lay.n * lay.per_gaussian()) {
        e.param = "pose";
        e.component = static_cast<int>(k - lay.n * lay.per_gaussian());
        return;
    }
    e.gaussian = k / lay.per_gaussian();
    const int off = static_cast<int>(k % lay.per_gaussian());
    if (off < 3) {
        e.param = "means", e.component = off;
    } else if (off < 6) {
        e.param = "raw_scales", e.component = off - 3;
    } else if (off < 10) {
        e.param = "quats", e.component = off - 6;
    } else if (off == 10) {
        e.param = "raw_opacities", e.component = 0;
    } else {
        e.param = "sh_coeffs", e.component = off - 11;
    }
}

} // namespace

GradcheckScene gradcheck_scene(const GradcheckOptions &opts, int index, std::vector<GradcheckEntry> *failures) {
    GradcheckScene info;
    info.scene = index;
    info.antialias = (index & 1) != 0;
    info.depth_loss = (index & 2) != 0;
    info.pose = (index & 4) != 0;
    info.sh_degree = (index + index / 4) % 4;

    const std::uint64_t seed = opts.seed * 1000003ull + static_cast<std::uint64_t>(index);
    auto scene = random_test_scene(seed, opts.max_gaussians, opts.size, info.sh_degree);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    Camera<double> camera = scene.cameras[0];
    if (info.pose) {
        Vec6<double> xi;
        for (int k = 0; k < 6; ++k) {
            xi(k) = 0.02 * normal(rng);
        }
        camera = retract(camera, xi);
    }
    const auto &cloud = scene.cloud;
    info.gaussians = cloud.size();

    const int w = camera.width, h = camera.height, channels = cloud.channels;
    ImageGradients<double> weights;
    weights.color.resize(Index(w) * h, channels);
    for (Index i = 0; i < weights.color.size(); ++i) {
        weights.color.data()[i] = normal(rng);
    }
    weights.alpha.resize(h, w);
    for (Index i = 0; i < weights.alpha.size(); ++i) {
        weights.alpha.data()[i] = normal(rng);
    }
    if (info.depth_loss) {
        weights.depth_acc.resize(h, w);
        weights.depth_exp.resize(h, w);
        for (Index i = 0; i < weights.depth_acc.size(); ++i) {
            weights.depth_acc.data()[i] = 0.3 * normal(rng);
            weights.depth_exp.data()[i] = 0.3 * normal(rng);
        }
    }

    RenderSettings<double> settings;
    settings.mode = info.antialias ? RasterMode::Antialiased : RasterMode::Classic;
    settings.sh_degree = info.sh_degree;
    const auto rendered = render(cloud, camera, settings);
    const auto grads = render_backward(cloud, rendered, weights);

    reference::Settings ref;
    ref.antialias = info.antialias;
    ref.blur = settings.blur;
    ref.sh_degree = info.sh_degree;
    const auto view_dirs = rendered.context.view_dirs;

    const Layout lay{cloud.size(), static_cast<int>(cloud.sh_coeffs.cols()), info.pose};
    GaussianCloud<double> probe_cloud = cloud;
    auto probe = [&](const VecX<double> &x) {
        Vec6<double> xi;
        unpack(x, lay, probe_cloud, xi);
        const Camera<double> cam = lay.pose ? retract(camera, xi) : camera;
        const auto out = reference::brute_force_render(probe_cloud, cam, ref, view_dirs);
        double loss = (out.color.array() * weights.color.array()).sum() + (out.alpha.array() * weights.alpha.array()).sum();
        if (info.depth_loss) {
            loss += (out.depth_acc.array() * weights.depth_acc.array()).sum() +
                    (out.depth_exp.array() * weights.depth_exp.array()).sum();
        }
        return reference::Probe{loss, reference::contribution_signature(out)};
    };
    const VecX<double> x0 = pack(cloud, lay);
    const auto fd = reference::finite_diff(probe, x0, opts.fd);
    const VecX<double> analytic = pack_grads(grads, lay);

    for (Index k = 0; k < x0.size(); ++k) {
        ++info.checked;
        const auto kk = static_cast<std::size_t>(k);
        const double err = reference::relative_error(analytic(k), fd.gradient(k), opts.fd.abs_floor);
        const bool bad = fd.non_finite[kk] || !(err < opts.fd.tolerance);
        if (fd.non_smooth[kk]) {
            ++info.non_smooth;
        }
        info.max_rel_error = std::max(info.max_rel_error, err);
        if (bad || fd.non_smooth[kk]) {
            info.failed += bad ? 1 : 0;
            if (failures && failures->size() < 50) {
                GradcheckEntry e;
                e.scene = index;
                describe(lay, k, e);
                e.analytic = analytic(k);
                e.numeric = fd.gradient(k);
                e.rel_error = err;
                failures->push_back(e);
            }
        }
    }
    return info;
}

GradcheckReport run_gradcheck(const GradcheckOptions &opts) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckReport report;
    for (int i = 0; i < opts.scenes; ++i) {
        const auto s = gradcheck_scene(opts, i, &report.failures);
        report.checked += s.checked;
        report.failed += s.failed;
        report.non_smooth += s.non_smooth;
        report.max_rel_error = std::max(report.max_rel_error, s.max_rel_error);
        report.scenes.push_back(s);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace splat
