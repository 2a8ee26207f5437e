// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end gradient check: analytic gradients from render_backward against
// central differences of the brute-force reference renderer.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/reference.hpp"

namespace splat {

struct GradcheckOptions {
    std::uint64_t seed = 20240;
    int scenes = 24;
    int max_gaussians = 32;
    int size = 32;
    reference::FDSpec fd;
};

struct GradcheckEntry {
    int scene = 0;
    std::string param; // means, raw_scales, quats, raw_opacities, sh_coeffs, pose
    Index gaussian = -1;
    int component = 0;
    double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradcheckScene {
    int scene = 0;
    bool antialias = false, depth_loss = false, pose = false;
    int sh_degree = 0;
    Index gaussians = 0;
    Index checked = 0, failed = 0, non_smooth = 0;
    double max_rel_error = 0;
};

struct GradcheckReport {
    std::vector<GradcheckScene> scenes;
    std::vector<GradcheckEntry> failures; // first 50
    Index checked = 0, failed = 0, non_smooth = 0;
    double max_rel_error = 0;
    double seconds = 0;

    bool passed() const { return failed == 0 && non_smooth == 0 && checked > 0; }
};

/// Scene i uses antialiasing when bit 0 is set, a depth loss for bit 1 and a
/// perturbed, differentiated pose for bit 2.
GradcheckScene gradcheck_scene(const GradcheckOptions &opts, int index, std::vector<GradcheckEntry> *failures = nullptr);

GradcheckReport run_gradcheck(const GradcheckOptions &opts = {});

} // namespace splat
