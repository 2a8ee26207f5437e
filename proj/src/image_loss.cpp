// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/image_loss.hpp"

#include <array>
#include <cmath>
#include <string>

#include "splat/errors.hpp"

namespace splat {

namespace {

constexpr int kRadius = 5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> window() {
    std::array<double, 2 * kRadius + 1> w{};
    double sum = 0;
    for (int i = -kRadius; i <= kRadius; ++i) {
        w[static_cast<std::size_t>(i + kRadius)] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
        sum += w[static_cast<std::size_t>(i + kRadius)];
    }
    for (auto &x : w) {
        x /= sum;
    }
    return w;
}

// Separable "same" filtering with zero padding. The kernel is symmetric, so the
// operator is self-adjoint and also serves the backward pass.
Image<double> blur(const Image<double> &in) {
    static const auto w = window();
    const Index h = in.rows(), wd = in.cols();
    Image<double> tmp = Image<double>::Zero(h, wd), out = Image<double>::Zero(h, wd);
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < wd; ++x) {
            double s = 0;
            for (int k = -kRadius; k <= kRadius; ++k) {
                const Index xx = x + k;
                if (xx >= 0 && xx < wd) {
                    s += w[static_cast<std::size_t>(k + kRadius)] * in(y, xx);
                }
            }
            tmp(y, x) = s;
        }
    }
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < wd; ++x) {
            double s = 0;
            for (int k = -kRadius; k <= kRadius; ++k) {
                const Index yy = y + k;
                if (yy >= 0 && yy < h) {
                    s += w[static_cast<std::size_t>(k + kRadius)] * tmp(yy, x);
                }
            }
            out(y, x) = s;
        }
    }
    return out;
}

Image<double> channel(const RowsX<double> &img, ImageShape shape, Index c) {
    Image<double> out(shape.height, shape.width);
    for (Index i = 0; i < out.size(); ++i) {
        out.data()[i] = img(i, c);
    }
    return out;
}

void check_shapes(const RowsX<double> &a, const RowsX<double> &b, ImageShape shape, const char *where) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != Index(shape.width) * shape.height) {
        throw ValidationError(std::string(where) + ": image shapes do not match");
    }
    if (!a.allFinite() || !b.allFinite()) {
        throw ValidationError(std::string(where) + ": non-finite pixel values");
    }
}

} // namespace

SsimResult ssim(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape, bool with_gradient) {
    check_shapes(render, target, shape, "ssim");
    SsimResult res;
    const Index channels = render.cols();
    const double norm = 1.0 / static_cast<double>(render.size());
    if (with_gradient) {
        res.gradient.setZero(render.rows(), channels);
    }
    double total = 0;
    for (Index c = 0; c < channels; ++c) {
        const Image<double> x = channel(render, shape, c), y = channel(target, shape, c);
        const Image<double> mx = blur(x), my = blur(y);
        const Image<double> exx = blur(x.cwiseProduct(x)), eyy = blur(y.cwiseProduct(y)), exy = blur(x.cwiseProduct(y));
        const Image<double> a1 = 2 * mx.cwiseProduct(my).array() + kC1;
        const Image<double> a2 = 2 * (exy - mx.cwiseProduct(my)).array() + kC2;
        const Image<double> b1 = mx.cwiseAbs2().array() + my.cwiseAbs2().array() + kC1;
        const Image<double> b2 = (exx - mx.cwiseAbs2() + eyy - my.cwiseAbs2()).array() + kC2;
        const Image<double> s = (a1.array() * a2.array()) / (b1.array() * b2.array());
        total += s.sum();
        if (!with_gradient) {
            continue;
        }
        // dS/d(mean_x), dS/d(E[x^2]) and dS/d(E[xy]) at each window center.
        const Image<double> b = b1.cwiseProduct(b2);
        const Image<double> d_mx = (2 * my.array() * (a2.array() - a1.array()) / b.array() -
                                    2 * mx.array() * s.array() * (1 / b1.array() - 1 / b2.array()))
                                       .matrix();
        const Image<double> d_exx = (-s.array() / b2.array()).matrix();
        const Image<double> d_exy = (2 * a1.array() / b.array()).matrix();
        const Image<double> g = blur(d_mx).array() + 2 * x.array() * blur(d_exx).array() + y.array() * blur(d_exy).array();
        for (Index i = 0; i < g.size(); ++i) {
            res.gradient(i, c) = norm * g.data()[i];
        }
    }
    res.value = total * norm;
    return res;
}

LossResult photometric_loss(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape,
                            double lambda_ssim) {
    check_shapes(render, target, shape, "photometric_loss");
    if (!(lambda_ssim >= 0 && lambda_ssim <= 1)) {
        throw ConfigError("photometric_loss: lambda_ssim must lie in [0, 1]");
    }
    LossResult res;
    const double n = static_cast<double>(render.size());
    const RowsX<double> diff = render - target;
    res.l1 = diff.cwiseAbs().sum() / n;
    res.gradient = ((1 - lambda_ssim) / n) * diff.unaryExpr([](double d) { return double((d > 0) - (d < 0)); });
    res.loss = (1 - lambda_ssim) * res.l1;
    if (lambda_ssim > 0) {
        const auto s = ssim(render, target, shape, true);
        res.ssim = s.value;
        res.loss += lambda_ssim * (1 - s.value);
        res.gradient -= lambda_ssim * s.gradient;
    }
    return res;
}

double psnr(const RowsX<double> &render, const RowsX<double> &target) {
    if (render.rows() != target.rows() || render.cols() != target.cols()) {
        throw ValidationError("psnr: image shapes do not match");
    }
    const double mse = (render - target).squaredNorm() / static_cast<double>(render.size());
    if (!(mse > 0)) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, -10 * std::log10(mse));
}

Metrics metrics(const RowsX<double> &render, const RowsX<double> &target, ImageShape shape) {
    const RowsX<double> clamped = render.cwiseMax(0.0).cwiseMin(1.0);
    return {psnr(clamped, target), ssim(clamped, target, shape).value};
}

} // namespace splat
