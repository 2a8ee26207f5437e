// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "splat/gradients.hpp"
#include "splat/image_loss.hpp"

namespace splat {

void TrainConfig::validate() const {
    if (iterations < 0) {
        throw ConfigError("train: iterations must be non-negative");
    }
    for (double v : {lr.means, lr.scales, lr.quats, lr.opacities, lr.sh, lr.pose}) {
        if (!(v > 0)) {
            throw ConfigError("train: learning rates must be positive");
        }
    }
    if (!(lr.means_final_factor > 0) || !(lr.sh_rest_factor > 0)) {
        throw ConfigError("train: learning-rate factors must be positive");
    }
    if (!(lambda_ssim >= 0 && lambda_ssim <= 1)) {
        throw ConfigError("train: lambda_ssim must lie in [0, 1]");
    }
    if (batch_size < 1) {
        throw ConfigError("train: batch_size must be at least 1");
    }
    if (sh_degree < 0 || sh_degree > 3) {
        throw ConfigError("train: sh_degree must lie in [0, 3]");
    }
    if (sh_warmup_every < 0) {
        throw ConfigError("train: sh_warmup_every must be non-negative");
    }
    if (!(blur >= 0)) {
        throw ConfigError("train: blur must be non-negative");
    }
    if (strategy == StrategyKind::Mcmc && mcmc.cap_max < 1) {
        throw ConfigError("train: mcmc cap must be positive");
    }
}

double scene_extent(const std::vector<Camera<double>> &cameras, const GaussianCloud<double> &cloud) {
    if (cameras.empty()) {
        return 1.0;
    }
    Vec3<double> mean = Vec3<double>::Zero();
    for (const auto &c : cameras) {
        mean += c.center() / static_cast<double>(cameras.size());
    }
    double radius = 0;
    for (const auto &c : cameras) {
        radius = std::max(radius, (c.center() - mean).norm());
    }
    if (radius > 1e-9) {
        return 1.1 * radius;
    }
    if (cloud.size() > 0) {
        const Vec3<double> centroid = cloud.means.colwise().mean().transpose();
        const double d = (centroid - cameras.front().center()).norm();
        if (d > 1e-9) {
            return d;
        }
    }
    return 1.0;
}

Camera<double> apply_pose_step(const Camera<double> &camera, const Vec6<double> &direction, double lr) {
    return retract(camera, Vec6<double>(-lr * direction));
}

Vec6<double> pose_offset(const Camera<double> &initial, const Camera<double> &current) {
    Vec6<double> xi;
    xi.head<3>() = so3_log<double>(initial.rotation.transpose() * current.rotation);
    xi.tail<3>() = initial.rotation.transpose() * (current.translation - initial.translation);
    return xi;
}

namespace {

struct GroupMoments {
    AdamMoments means, scales, quats, opacities, sh;

    void remap(const RowMap &map) {
        for (auto *m : {&means, &scales, &quats, &opacities, &sh}) {
            if (m->m.rows() > 0) {
                m->remap(map);
            }
        }
    }
};

bool grads_finite(const BackwardResult<double> &b) { return b.cloud.all_finite() && b.pose.local.allFinite(); }

} // namespace

TrainResult train(const GaussianCloud<double> &init, const std::vector<TrainView> &views, const TrainConfig &config,
                  const StepCallback &on_step) {
    config.validate();
    if (views.empty()) {
        throw ValidationError("train: at least one view is required");
    }
    for (const auto &v : views) {
        v.camera.validate();
        if (v.target.rows() != Index(v.camera.width) * v.camera.height || v.target.cols() != init.channels) {
            throw ValidationError("train: target image does not match its camera or the cloud channels");
        }
    }
    init.validate();

    TrainResult res;
    res.cloud = init;
    auto &cloud = res.cloud;
    for (const auto &v : views) {
        res.cameras.push_back(v.camera);
    }
    std::vector<Camera<double>> initial = res.cameras;
    res.scene_extent = scene_extent(res.cameras, cloud);

    StrategyState state(cloud.size());
    GroupMoments mom;
    std::vector<AdamMoments> pose_mom(views.size());
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    RenderSettings<double> settings;
    settings.mode = config.mode;
    settings.blur = config.blur;
    settings.threads = config.threads;
    if (!config.background.empty()) {
        settings.background = Eigen::Map<const VecX<double>>(config.background.data(),
                                                             static_cast<Index>(config.background.size()));
    }
    const GradMode grad_mode = config.absgrad ? GradMode::Absolute : GradMode::Signed;
    const auto start = std::chrono::steady_clock::now();
    const double decay = std::pow(config.lr.means_final_factor, 1.0 / std::max(1, config.iterations));

    for (int step = 0; step < config.iterations; ++step) {
        const double lr_means = config.lr.means * res.scene_extent * std::pow(decay, step);
        const int max_degree = std::min(config.sh_degree, cloud.max_sh_degree());
        settings.sh_degree =
            config.sh_warmup_every > 0 ? std::min(max_degree, step / config.sh_warmup_every) : max_degree;

        const int batch = std::min<int>(config.batch_size, static_cast<int>(views.size()));
        CloudGrads<double> sum = CloudGrads<double>::zeros(cloud);
        std::vector<ViewGradients> view_grads;
        std::vector<std::pair<std::size_t, Vec6<double>>> pose_grads;
        MetricRow row;
        row.step = step;
        for (int b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                order.resize(views.size());
                std::iota(order.begin(), order.end(), std::size_t(0));
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const std::size_t vi = order[cursor++];
            const auto &cam = res.cameras[vi];
            const auto rendered = render(cloud, cam, settings);
            const ImageShape shape{cam.width, cam.height};
            const auto loss = photometric_loss(rendered.output.color, views[vi].target, shape, config.lambda_ssim);
            ImageGradients<double> ig;
            ig.color = loss.gradient / batch;
            const auto back = render_backward(cloud, rendered, ig);
            if (!std::isfinite(loss.loss) || !grads_finite(back)) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "train: non-finite loss or gradient at step %d (view %zu, %ld Gaussians, loss %g)",
                              step, vi, static_cast<long>(cloud.size()), loss.loss);
                throw TrainingAborted(msg, step);
            }
            sum.means += back.cloud.means;
            sum.raw_scales += back.cloud.raw_scales;
            sum.quats += back.cloud.quats;
            sum.raw_opacities += back.cloud.raw_opacities;
            sum.sh_coeffs += back.cloud.sh_coeffs;

            ViewGradients vg;
            vg.mean2d = back.cloud.mean2d;
            vg.mean2d_abs = back.cloud.mean2d_abs;
            vg.width = cam.width;
            vg.height = cam.height;
            vg.radius.resize(cloud.size());
            vg.visible.resize(static_cast<std::size_t>(cloud.size()));
            for (Index i = 0; i < cloud.size(); ++i) {
                const auto &p = rendered.context.projected[static_cast<std::size_t>(i)];
                vg.visible[static_cast<std::size_t>(i)] = p.visible;
                vg.radius(i) = p.visible ? p.radius : 0.0;
            }
            view_grads.push_back(std::move(vg));
            if (config.pose_opt) {
                pose_grads.emplace_back(vi, back.pose.local);
            }
            const Metrics m = metrics(rendered.output.color, views[vi].target, shape);
            row.loss += loss.loss / batch;
            row.psnr += m.psnr / batch;
            row.ssim += m.ssim / batch;
        }

        if (config.strategy == StrategyKind::Adc && step < config.adc.refine_stop) {
            accumulate(state, view_grads, grad_mode);
        }

        const auto &m = config.optimize;
        if (m.means) {
            adam_step(cloud.means, sum.means, mom.means, lr_means, config.adam);
        }
        if (m.scales) {
            adam_step(cloud.raw_scales, sum.raw_scales, mom.scales, config.lr.scales, config.adam);
        }
        if (m.quats) {
            adam_step(cloud.quats, sum.quats, mom.quats, config.lr.quats, config.adam);
        }
        if (m.opacities) {
            Eigen::Map<RowsX<double>> op(cloud.raw_opacities.data(), cloud.size(), 1);
            const Eigen::Map<const RowsX<double>> gop(sum.raw_opacities.data(), cloud.size(), 1);
            adam_step(op, gop, mom.opacities, config.lr.opacities, config.adam);
        }
        if (m.sh) {
            // DC columns at the full rate, higher bands scaled down.
            const RowsX<double> dir = adam_direction(sum.sh_coeffs, mom.sh, config.adam);
            const Index dc = cloud.channels;
            cloud.sh_coeffs.leftCols(dc) -= config.lr.sh * dir.leftCols(dc);
            cloud.sh_coeffs.rightCols(dir.cols() - dc) -=
                config.lr.sh * config.lr.sh_rest_factor * dir.rightCols(dir.cols() - dc);
        }
        for (const auto &[vi, g] : pose_grads) {
            const RowsX<double> gm = g.transpose();
            const RowsX<double> dir = adam_direction(gm, pose_mom[vi], config.adam);
            res.cameras[vi] = apply_pose_step(res.cameras[vi], Vec6<double>(dir.row(0).transpose()), config.lr.pose);
        }

        if (config.strategy == StrategyKind::Adc) {
            const auto r = adc_step(cloud, state, step, config.adc, res.scene_extent, &rng);
            if (!r.rows.is_identity()) {
                mom.remap(r.rows);
            }
            if (r.opacities_reset && mom.opacities.m.rows() > 0) {
                mom.opacities.clear();
            }
        } else if (config.strategy == StrategyKind::Mcmc) {
            const auto r = mcmc_step(cloud, state, step, lr_means, config.mcmc, &rng);
            if (!r.rows.is_identity()) {
                mom.remap(r.rows);
            }
        }

        row.num_gaussians = cloud.size();
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        res.log.push_back(row);
        if (on_step) {
            on_step(row);
        }
    }
    for (std::size_t v = 0; v < views.size(); ++v) {
        res.perturbations.push_back(pose_offset(initial[v], res.cameras[v]));
    }
    return res;
}

std::string metric_csv_header(bool with_wall_time) {
    return with_wall_time ? "step,loss,psnr,ssim,num_gaussians,wall_ms" : "step,loss,psnr,ssim,num_gaussians";
}

std::string metric_csv_row(const MetricRow &row, bool with_wall_time) {
    char buf[256];
    int n = std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%ld", row.step, row.loss, row.psnr, row.ssim,
                          static_cast<long>(row.num_gaussians));
    if (with_wall_time) {
        std::snprintf(buf + n, sizeof buf - static_cast<std::size_t>(n), ",%.3f", row.wall_ms);
    }
    return buf;
}

void write_metric_log(std::ostream &os, const std::vector<MetricRow> &log, bool with_wall_time) {
    os << metric_csv_header(with_wall_time) << '\n';
    for (const auto &r : log) {
        os << metric_csv_row(r, with_wall_time) << '\n';
    }
}

} // namespace splat
