// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace splat {

Camera<double> look_at(const Vec3<double> &eye, const Vec3<double> &target, const Vec3<double> &up, double focal,
                       int width, int height) {
    const Vec3<double> z = (target - eye).normalized();
    const Vec3<double> x = z.cross(up).normalized();
    const Vec3<double> y = z.cross(x);
    Camera<double> cam;
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.rotation = orthonormalize<double>(cam.rotation);
    cam.translation = -cam.rotation * eye;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

GaussianCloud<double> random_cloud(std::mt19937_64 &rng, Index n, int sh_degree, const RandomCloudOptions &opts) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> log_scale(std::log(opts.min_scale), std::log(opts.max_scale));
    std::uniform_real_distribution<double> raw_opacity(opts.min_raw_opacity, opts.max_raw_opacity);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto cloud = GaussianCloud<double>::zeros(n, sh_degree, 3);
    for (Index i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            cloud.means(i, k) = opts.center(k) + opts.spread * unit(rng);
            cloud.raw_scales(i, k) = log_scale(rng);
        }
        Vec4<double> q;
        do {
            q = Vec4<double>(normal(rng), normal(rng), normal(rng), normal(rng));
        } while (q.norm() < 0.1);
        cloud.quats.row(i) = q.transpose();
        cloud.raw_opacities(i) = raw_opacity(rng);
        for (Index c = 0; c < cloud.sh_coeffs.cols(); ++c) {
            cloud.sh_coeffs(i, c) = opts.sh_sigma * normal(rng);
        }
    }
    return cloud;
}

SyntheticScene random_test_scene(std::uint64_t seed, int max_gaussians, int size, int sh_degree) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count(std::max(1, max_gaussians / 2), max_gaussians);
    SyntheticScene scene;
    RandomCloudOptions opts;
    opts.center = Vec3<double>(0, 0, 3.5);
    opts.spread = 0.6;
    opts.min_scale = 0.06;
    opts.max_scale = 0.3;
    scene.cloud = random_cloud(rng, count(rng), sh_degree, opts);
    // Depth spread beyond the lateral cube.
    std::uniform_real_distribution<double> depth(2.2, 5.0);
    for (Index i = 0; i < scene.cloud.size(); ++i) {
        scene.cloud.means(i, 2) = depth(rng);
    }
    Camera<double> cam;
    cam.fx = cam.fy = 1.2 * size;
    cam.cx = 0.5 * size;
    cam.cy = 0.5 * size;
    cam.width = cam.height = size;
    scene.cameras.push_back(cam);
    return scene;
}

SyntheticScene toy_scene(std::uint64_t seed, int gaussians, int views, int size) {
    std::mt19937_64 rng(seed);
    SyntheticScene scene;
    RandomCloudOptions opts;
    opts.spread = 0.45;
    opts.min_scale = 0.08;
    opts.max_scale = 0.25;
    opts.min_raw_opacity = 1.0;
    opts.max_raw_opacity = 3.0;
    opts.sh_sigma = 0.0;
    scene.cloud = random_cloud(rng, gaussians, 0, opts);
    std::uniform_real_distribution<double> dc(-1.5, 1.5);
    for (Index i = 0; i < scene.cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            scene.cloud.sh(i, 0, c) = dc(rng);
        }
    }
    const double radius = 3.0;
    for (int v = 0; v < views; ++v) {
        const double az = 2.0 * std::numbers::pi * v / views;
        const double el = 0.35 * std::sin(3.0 * az + 0.5);
        const Vec3<double> eye(radius * std::cos(el) * std::cos(az), radius * std::sin(el),
                               radius * std::cos(el) * std::sin(az));
        scene.cameras.push_back(look_at(eye, Vec3<double>::Zero(), Vec3<double>(0, -1, 0), 1.1 * size, size, size));
    }
    return scene;
}

} // namespace splat
