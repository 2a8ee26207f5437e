// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic scenes for tests, benchmarks and the gradcheck harness.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "splat/scene.hpp"

namespace splat {

struct SyntheticScene {
    GaussianCloud<double> cloud;
    std::vector<Camera<double>> cameras;
};

/// Pinhole camera at `eye` looking at `target`; +y of the image points along -up.
Camera<double> look_at(const Vec3<double> &eye, const Vec3<double> &target, const Vec3<double> &up, double focal,
                       int width, int height);

struct RandomCloudOptions {
    Vec3<double> center = Vec3<double>::Zero();
    double spread = 0.5;     // half-width of the cube means are drawn from
    double min_scale = 0.05; // activated scale range (log-uniform)
    double max_scale = 0.3;
    double min_raw_opacity = -2.0;
    double max_raw_opacity = 2.0;
    double sh_sigma = 0.3; // std-dev of SH coefficients
};

GaussianCloud<double> random_cloud(std::mt19937_64 &rng, Index n, int sh_degree, const RandomCloudOptions &opts = {});

/// Small scene in front of an identity-ish camera: at most `max_gaussians`
/// Gaussians, `size` x `size` pixels.
SyntheticScene random_test_scene(std::uint64_t seed, int max_gaussians = 32, int size = 32, int sh_degree = 0);

/// Ground-truth scene for reconstruction tests: `gaussians` colored blobs near
/// the origin observed by `views` cameras on a ring around it.
SyntheticScene toy_scene(std::uint64_t seed, int gaussians = 8, int views = 17, int size = 64);

} // namespace splat
