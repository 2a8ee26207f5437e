// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value training configuration. Keys mirror the CLI flag names
// (without the leading dashes); '#' starts a comment.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "splat/trainer.hpp"

namespace splat {

std::map<std::string, std::string> parse_key_values(const std::string &text);

/// Applies recognised keys to `config`; unknown keys or bad values throw ConfigError.
void apply_config(const std::map<std::string, std::string> &entries, TrainConfig &config);

TrainConfig load_train_config(const std::filesystem::path &path, TrainConfig base = {});

} // namespace splat
