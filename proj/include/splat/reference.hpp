// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Slow reference paths used to check the production renderer and its
// gradients. Nothing here calls into the projection, rasterizer or gradients
// headers: the renderer below re-derives every per-Gaussian quantity from the
// raw cloud and composites each pixel over one global depth order.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "splat/scene.hpp"

namespace splat::reference {

// Same values as splat::raster; tests assert they agree.
inline constexpr double kAlphaMax = 0.999;
inline constexpr double kAlphaCut = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kMaxExponent = 4.5;

struct Settings {
    bool antialias = false;
    double blur = 0.3;
    int sh_degree = 0;
    std::vector<double> background; // empty = black
};

template <typename Scalar> struct Output {
    int width = 0, height = 0, channels = 0;
    RowsX<Scalar> color;
    Image<Scalar> alpha, depth_acc, depth_exp;
    CountImage contributors; // composited Gaussians per pixel
    CountImage clamped;      // of which alpha hit the clamp
};

namespace detail {

template <typename Scalar> Mat3<Scalar> rotation_of(Scalar w, Scalar x, Scalar y, Scalar z) {
    const Scalar n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n, x /= n, y /= n, z /= n;
    Mat3<Scalar> r;
    r(0, 0) = 1 - 2 * (y * y + z * z);
    r(0, 1) = 2 * (x * y - w * z);
    r(0, 2) = 2 * (x * z + w * y);
    r(1, 0) = 2 * (x * y + w * z);
    r(1, 1) = 1 - 2 * (x * x + z * z);
    r(1, 2) = 2 * (y * z - w * x);
    r(2, 0) = 2 * (x * z - w * y);
    r(2, 1) = 2 * (y * z + w * x);
    r(2, 2) = 1 - 2 * (x * x + y * y);
    return r;
}

template <typename Scalar> Scalar sh_color(const Vec3<Scalar> &d, const GaussianCloud<Scalar> &cloud, Index n, int c,
                                           int degree) {
    const Scalar x = d(0), y = d(1), z = d(2);
    std::array<Scalar, 16> basis{};
    std::size_t count = 0;
    auto push = [&](std::initializer_list<Scalar> values) {
        for (const Scalar b : values) {
            basis[count++] = b;
        }
    };
    push({Scalar(0.28209479177387814)});
    if (degree >= 1) {
        const Scalar k1 = Scalar(0.4886025119029199);
        push({-k1 * y, k1 * z, -k1 * x});
    }
    if (degree >= 2) {
        push({Scalar(1.0925484305920792) * x * y, Scalar(-1.0925484305920792) * y * z,
              Scalar(0.31539156525252005) * (2 * z * z - x * x - y * y), Scalar(-1.0925484305920792) * x * z,
              Scalar(0.5462742152960396) * (x * x - y * y)});
    }
    if (degree >= 3) {
        push({Scalar(-0.5900435899266435) * y * (3 * x * x - y * y), Scalar(2.890611442640554) * x * y * z,
              Scalar(-0.4570457994644658) * y * (4 * z * z - x * x - y * y),
              Scalar(0.3731763325901154) * z * (2 * z * z - 3 * x * x - 3 * y * y),
              Scalar(-0.4570457994644658) * x * (4 * z * z - x * x - y * y),
              Scalar(1.445305721320277) * z * (x * x - y * y), Scalar(-0.5900435899266435) * x * (x * x - 3 * y * y)});
    }
    Scalar v = Scalar(0.5);
    for (std::size_t k = 0; k < count; ++k) {
        v += basis[k] * cloud.sh_coeffs(n, static_cast<Index>(k) * cloud.channels + c);
    }
    return v;
}

template <typename Scalar> struct Splat {
    Index index;
    Scalar depth, mx, my;
    Scalar ia, ib, ic; // inverse covariance [ia ib; ib ic]
    Scalar peak;       // opacity * compensation
    std::vector<Scalar> color;
};

} // namespace detail

/// Renders every pixel against every Gaussian in global (depth, index) order.
/// `view_dirs`, when non-empty, fixes the SH directions.
template <typename Scalar>
Output<Scalar> brute_force_render(const GaussianCloud<Scalar> &cloud, const Camera<Scalar> &cam,
                                  const Settings &settings, const std::vector<Vec3<Scalar>> &view_dirs = {}) {
    const int w = cam.width, h = cam.height, nc = cloud.channels;
    std::vector<detail::Splat<Scalar>> splats;
    const Mat3<Scalar> &r = cam.rotation;
    const Vec3<Scalar> center = -r.transpose() * cam.translation;
    for (Index n = 0; n < cloud.size(); ++n) {
        const Vec3<Scalar> mu = cloud.means.row(n).transpose();
        const Vec3<Scalar> t = r * mu + cam.translation;
        if (!(t(2) > cam.near_plane)) {
            continue;
        }
        const Mat3<Scalar> rot = detail::rotation_of(cloud.quats(n, 0), cloud.quats(n, 1), cloud.quats(n, 2), cloud.quats(n, 3));
        Mat3<Scalar> m;
        for (int j = 0; j < 3; ++j) {
            m.col(j) = rot.col(j) * std::exp(cloud.raw_scales(n, j));
        }
        const Mat3<Scalar> sigma_cam = r * (m * m.transpose()) * r.transpose();
        // Rows of the pinhole Jacobian.
        const Vec3<Scalar> jx(cam.fx / t(2), 0, -cam.fx * t(0) / (t(2) * t(2)));
        const Vec3<Scalar> jy(0, cam.fy / t(2), -cam.fy * t(1) / (t(2) * t(2)));
        const Scalar a = jx.dot(sigma_cam * jx), b = jx.dot(sigma_cam * jy), c = jy.dot(sigma_cam * jy);
        const Scalar blur = Scalar(settings.blur);
        const Scalar ab = a + blur, cb = c + blur;
        const Scalar det = ab * cb - b * b;
        if (!(det > 0)) {
            continue;
        }
        Scalar comp = 1;
        if (settings.antialias) {
            comp = std::sqrt(std::max(Scalar(0), (a * c - b * b) / det));
        }
        detail::Splat<Scalar> s;
        s.index = n;
        s.depth = t(2);
        s.mx = cam.fx * t(0) / t(2) + cam.cx;
        s.my = cam.fy * t(1) / t(2) + cam.cy;
        s.ia = cb / det;
        s.ib = -b / det;
        s.ic = ab / det;
        const Scalar o = Scalar(1) / (Scalar(1) + std::exp(-cloud.raw_opacities(n)));
        s.peak = o * comp;
        Vec3<Scalar> dir;
        if (!view_dirs.empty()) {
            dir = view_dirs[static_cast<std::size_t>(n)];
        } else {
            dir = (mu - center).normalized();
        }
        for (int ch = 0; ch < nc; ++ch) {
            s.color.push_back(detail::sh_color(dir, cloud, n, ch, settings.sh_degree));
        }
        splats.push_back(std::move(s));
    }
    std::stable_sort(splats.begin(), splats.end(), [](const auto &x, const auto &y) {
        return x.depth < y.depth || (x.depth == y.depth && x.index < y.index);
    });

    Output<Scalar> out;
    out.width = w;
    out.height = h;
    out.channels = nc;
    out.color.setZero(Index(w) * h, nc);
    out.alpha.setZero(h, w);
    out.depth_acc.setZero(h, w);
    out.depth_exp.setZero(h, w);
    out.contributors.setZero(h, w);
    out.clamped.setZero(h, w);
    std::vector<Scalar> acc(static_cast<std::size_t>(nc));
    for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
            std::fill(acc.begin(), acc.end(), Scalar(0));
            Scalar trans = 1, dacc = 0;
            int count = 0, clamps = 0;
            for (const auto &s : splats) {
                const Scalar dx = Scalar(px) + Scalar(0.5) - s.mx;
                const Scalar dy = Scalar(py) + Scalar(0.5) - s.my;
                const Scalar power = Scalar(0.5) * (s.ia * dx * dx + Scalar(2) * s.ib * dx * dy + s.ic * dy * dy);
                if (power > Scalar(kMaxExponent)) {
                    continue;
                }
                Scalar alpha = s.peak * std::exp(-power);
                if (alpha < Scalar(kAlphaCut)) {
                    continue;
                }
                if (alpha > Scalar(kAlphaMax)) {
                    alpha = Scalar(kAlphaMax);
                    ++clamps;
                }
                const Scalar next = trans * (Scalar(1) - alpha);
                if (next < Scalar(kMinTransmittance)) {
                    break;
                }
                for (int ch = 0; ch < nc; ++ch) {
                    acc[static_cast<std::size_t>(ch)] += s.color[static_cast<std::size_t>(ch)] * alpha * trans;
                }
                dacc += s.depth * alpha * trans;
                trans = next;
                ++count;
            }
            const Index pix = Index(py) * w + px;
            for (int ch = 0; ch < nc; ++ch) {
                const Scalar bg = settings.background.empty() ? Scalar(0) : Scalar(settings.background[static_cast<std::size_t>(ch)]);
                out.color(pix, ch) = acc[static_cast<std::size_t>(ch)] + trans * bg;
            }
            out.alpha(py, px) = Scalar(1) - trans;
            out.depth_acc(py, px) = dacc;
            out.depth_exp(py, px) = out.alpha(py, px) > 0 ? dacc / out.alpha(py, px) : Scalar(0);
            out.contributors(py, px) = count;
            out.clamped(py, px) = clamps;
        }
    }
    return out;
}

/// Hash of which Gaussians composite where; equal signatures mean the render
/// stays in one smooth regime.
template <typename Scalar> std::uint64_t contribution_signature(const Output<Scalar> &out) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    for (Index i = 0; i < out.contributors.size(); ++i) {
        mix(static_cast<std::uint64_t>(out.contributors.data()[i]));
        mix(static_cast<std::uint64_t>(out.clamped.data()[i]) << 32);
    }
    return h;
}

struct FDSpec {
    double step = 1e-5;       // relative: h = step * max(1, |x|)
    double tolerance = 1e-4;  // relative
    double abs_floor = 1e-8;  // absolute differences below this always pass
    int max_refinements = 4;  // step /= 10 while the signature changes across the probe
    std::vector<bool> mask;   // empty = all
};

struct FDResult {
    VecX<double> gradient;
    VecX<double> step_used;
    std::vector<bool> non_finite;
    std::vector<bool> non_smooth; // signature never stabilized
};

/// Loss value and contribution signature at one parameter vector.
struct Probe {
    double loss = 0;
    std::uint64_t signature = 0;
};

/// Central differences (f(x+h) - f(x-h)) / 2h per masked element. The step
/// shrinks while either probe lands in a different contribution regime.
inline FDResult finite_diff(const std::function<Probe(const VecX<double> &)> &probe, const VecX<double> &params,
                            const FDSpec &spec) {
    if (!(spec.step > 0)) {
        throw ValidationError("finite_diff: step must be positive");
    }
    const Index n = params.size();
    FDResult res;
    res.gradient.setZero(n);
    res.step_used.setZero(n);
    res.non_finite.assign(static_cast<std::size_t>(n), false);
    res.non_smooth.assign(static_cast<std::size_t>(n), false);
    const std::uint64_t base_sig = probe(params).signature;
    VecX<double> x = params;
    for (Index i = 0; i < n; ++i) {
        if (!spec.mask.empty() && !spec.mask[static_cast<std::size_t>(i)]) {
            continue;
        }
        double h = spec.step * std::max(1.0, std::abs(params(i)));
        for (int attempt = 0;; ++attempt) {
            x(i) = params(i) + h;
            const Probe p = probe(x);
            x(i) = params(i) - h;
            const Probe m = probe(x);
            x(i) = params(i);
            res.gradient(i) = (p.loss - m.loss) / (2 * h);
            res.step_used(i) = h;
            if (!std::isfinite(p.loss) || !std::isfinite(m.loss)) {
                res.non_finite[static_cast<std::size_t>(i)] = true;
                break;
            }
            if (p.signature == base_sig && m.signature == base_sig) {
                break;
            }
            if (attempt >= spec.max_refinements) {
                res.non_smooth[static_cast<std::size_t>(i)] = true;
                break;
            }
            h /= 10;
        }
    }
    return res;
}

/// Plain-function form: no signature, so the step is never refined.
inline FDResult finite_diff(const std::function<double(const VecX<double> &)> &loss, const VecX<double> &params,
                            const FDSpec &spec) {
    return finite_diff(std::function<Probe(const VecX<double> &)>(
                           [&](const VecX<double> &x) { return Probe{loss(x), 0}; }),
                       params, spec);
}

/// |a - n| relative to the larger magnitude; zero when under the absolute floor.
inline double relative_error(double analytic, double numeric, double abs_floor) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_floor) {
        return 0.0;
    }
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

} // namespace splat::reference
