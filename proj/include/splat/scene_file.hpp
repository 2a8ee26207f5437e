// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Native scene document: versioned JSON holding Gaussians, cameras and
// optional target-image references. Doubles are printed in shortest
// round-trip form, so save followed by load is lossless.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "splat/scene.hpp"

namespace splat {

inline constexpr int kSceneFileVersion = 1;

class SchemaVersionError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class MalformedDocumentError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class NonFiniteValueError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

struct Scene {
    GaussianCloud<double> cloud;
    std::vector<Camera<double>> cameras;
    std::vector<std::string> images; // per camera; empty string when absent
};

std::string scene_to_string(const Scene &scene);
Scene scene_from_string(const std::string &text);

void save_scene(const std::filesystem::path &path, const Scene &scene);
Scene load_scene(const std::filesystem::path &path);

} // namespace splat
