// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Photometric loss and image metrics on (H * W) x C row-major images.

#pragma once

#include "splat/types.hpp"

namespace splat {

struct ImageShape {
    int width = 0, height = 0;
};

struct SsimResult {
    double value = 0;
    RowsX<double> gradient; // d value / d render, empty unless requested
};

/// Mean SSIM over pixels and channels, 11 x 11 Gaussian window (sigma 1.5),
/// zero padding, C1 = 0.01^2, C2 = 0.03^2.
SsimResult ssim(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape, bool with_gradient = false);

struct LossResult {
    double loss = 0;
    double l1 = 0;
    double ssim = 1;
    RowsX<double> gradient; // dL / d render
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) with its gradient.
LossResult photometric_loss(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape,
                            double lambda_ssim = 0.2);

inline constexpr double kPsnrCap = 100.0;

/// -10 log10(MSE), capped at 100 dB for identical images.
double psnr(const RowsX<double> &render, const RowsX<double> &target);

struct Metrics {
    double psnr = 0, ssim = 0;
};

/// PSNR and SSIM of the render clamped to [0, 1].
Metrics metrics(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape);

} // namespace splat
