// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Binary little-endian PLY in the layout shared by 3DGS tools: x y z,
// f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3, all float32.
// Opacity is stored as a logit and scales as logs, matching raw parameters.

#pragma once

#include <filesystem>

#include "splat/scene.hpp"

namespace splat {

class UnsupportedLayoutError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Writes degree-3 RGB SH; lower-degree clouds are zero padded.
void export_ply(const std::filesystem::path &path, const GaussianCloud<double> &cloud);

/// Always returns a degree-3 RGB cloud. Normals (nx ny nz), if present, are ignored.
GaussianCloud<double> import_ply(const std::filesystem::path &path);

/// The cloud export_ply followed by import_ply yields: f32-rounded and padded to degree 3.
GaussianCloud<double> ply_quantized(const GaussianCloud<double> &cloud);

} // namespace splat
