// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Netpbm output. Color: binary P6, 8 bits, byte = floor(clamp(v, 0, 1) * 255 + 0.5).
// Depth: binary P5, 16 bits big-endian, value = round(d / d_max * 65535) with
// d_max written in a "# d_max <value>" comment line.

#pragma once

#include <filesystem>
#include <string>

#include "splat/types.hpp"

namespace splat {

/// Writes `data` to `path` through a temporary file in the same directory and a rename.
void write_file_atomic(const std::filesystem::path &path, const std::string &data);

std::string encode_ppm(const RowsX<double> &color, int width, int height);
void write_ppm(const std::filesystem::path &path, const RowsX<double> &color, int width, int height);

/// Reads P6 (8 or 16 bit) or P5 into (H * W) x 3 values in [0, 1]. Gray images are replicated.
RowsX<double> read_ppm(const std::filesystem::path &path, int &width, int &height);

/// d_max <= 0 selects the largest finite depth in the map.
std::string encode_depth_pgm(const Image<double> &depth, double d_max = 0);
void write_depth_pgm(const std::filesystem::path &path, const Image<double> &depth, double d_max = 0);

} // namespace splat
