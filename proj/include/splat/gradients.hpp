// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form backward pass of the renderer.
//
// Compositing is replayed back to front from the saved final transmittance:
//   T_{n} = T_{n+1} / (1 - a_n)
//   dC/dc_n = a_n T_n
//   dC/da_n = c_n T_n - S_n / (1 - a_n),   S_n = sum_{m>n} c_m a_m T_m + T_final * bg
// and then chained through the projection, the covariance factorization
// Sigma = (R S)(R S)^T and the parameter activations.

#pragma once

#include <array>
#include <vector>

#include "splat/rasterizer.hpp"

namespace splat {

/// Upstream gradients of a scalar loss w.r.t. the render outputs. Empty members count as zero.
template <typename Scalar> struct ImageGradients {
    RowsX<Scalar> color; // (H * W) x C
    Image<Scalar> alpha;
    Image<Scalar> depth_acc;
    Image<Scalar> depth_exp;
};

/// Per-Gaussian gradients w.r.t. the 2D quantities used by compositing.
template <typename Scalar> struct Gaussian2DGrads {
    RowsX<Scalar> color;     // N x C
    VecX<Scalar> opacity;    // activated opacity
    VecX<Scalar> compensation;
    Rows<Scalar, 2> mean2d;
    Rows<Scalar, 2> mean2d_abs; // sum over pixels of |per-pixel gradient|
    std::vector<Mat2<Scalar>> conic;
    std::vector<Mat2<Scalar>> cov2d; // w.r.t. the blurred covariance (= w.r.t. the raw one, blur path only)
    VecX<Scalar> depth;

    void resize(Index n, int channels) {
        color.setZero(n, channels);
        opacity.setZero(n);
        compensation.setZero(n);
        mean2d.setZero(n, 2);
        mean2d_abs.setZero(n, 2);
        conic.assign(static_cast<std::size_t>(n), Mat2<Scalar>::Zero());
        cov2d.assign(static_cast<std::size_t>(n), Mat2<Scalar>::Zero());
        depth.setZero(n);
    }
};

template <typename Scalar> struct CloudGrads {
    Rows<Scalar, 3> means;
    Rows<Scalar, 3> raw_scales;
    Rows<Scalar, 4> quats;
    VecX<Scalar> raw_opacities;
    RowsX<Scalar> sh_coeffs;
    Rows<Scalar, 2> mean2d;
    Rows<Scalar, 2> mean2d_abs;

    static CloudGrads zeros(const GaussianCloud<Scalar> &cloud) {
        CloudGrads g;
        const Index n = cloud.size();
        g.means.setZero(n, 3);
        g.raw_scales.setZero(n, 3);
        g.quats.setZero(n, 4);
        g.raw_opacities.setZero(n);
        g.sh_coeffs.setZero(n, cloud.sh_coeffs.cols());
        g.mean2d.setZero(n, 2);
        g.mean2d_abs.setZero(n, 2);
        return g;
    }

    bool all_finite() const {
        return means.allFinite() && raw_scales.allFinite() && quats.allFinite() && raw_opacities.allFinite() &&
               sh_coeffs.allFinite() && mean2d.allFinite() && mean2d_abs.allFinite();
    }
};

template <typename Scalar> struct PoseGrads {
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Mat3<Scalar> rotation = Mat3<Scalar>::Zero();
    /// d/d[R | t] of the 4 x 4 world-to-camera matrix; last row is zero.
    Mat4<Scalar> view_matrix = Mat4<Scalar>::Zero();
    /// Right-multiplied local perturbation (axis-angle, translation): R' = R exp([w]x), t' = t + R d.
    Vec6<Scalar> local = Vec6<Scalar>::Zero();
    /// Gradient w.r.t. the camera center, -sum_n dL/dmu_n (point path only).
    Vec3<Scalar> center = Vec3<Scalar>::Zero();
};

/// Replays transmittance back to front: given the alphas of the composited
/// Gaussians (front to back) and the final T, returns T_n before each one.
template <typename Scalar>
std::vector<Scalar> replay_transmittance(const std::vector<Scalar> &alphas, Scalar final_t) {
    std::vector<Scalar> t(alphas.size());
    Scalar cur = final_t;
    for (std::size_t i = alphas.size(); i-- > 0;) {
        cur = cur / (Scalar(1) - alphas[i]);
        t[i] = cur;
    }
    return t;
}

namespace detail {

// Layout of one row of a tile's partial-gradient buffer.
struct PartialLayout {
    int channels;
    int color() const { return 0; }
    int opacity() const { return channels; }
    int compensation() const { return channels + 1; }
    int mean2d() const { return channels + 2; }
    int mean2d_abs() const { return channels + 4; }
    int conic() const { return channels + 6; } // 00, 01, 10, 11
    int depth() const { return channels + 10; }
    int stride() const { return channels + 11; }
};

template <typename Scalar>
void composite_backward_tile(const RenderContext<Scalar> &ctx, const RenderOutput<Scalar> &out,
                             const ImageGradients<Scalar> &grads, Index tile, RowsX<Scalar> &partial) {
    const TileGrid &grid = ctx.grid;
    const PartialLayout lay{out.channels};
    const int channels = out.channels;
    const Index begin = grid.tile_begin(tile);
    partial.setZero(grid.tile_count(tile), lay.stride());
    if (grid.tile_count(tile) == 0) {
        return;
    }
    const int tx = static_cast<int>(tile % grid.tiles_x), ty = static_cast<int>(tile / grid.tiles_x);
    const int x0 = tx * grid.tile_size, y0 = ty * grid.tile_size;
    const int x1 = std::min(out.width, x0 + grid.tile_size), y1 = std::min(out.height, y0 + grid.tile_size);
    const bool has_color = grads.color.size() != 0, has_alpha = grads.alpha.size() != 0;
    const bool has_dacc = grads.depth_acc.size() != 0, has_dexp = grads.depth_exp.size() != 0;

    VecX<Scalar> g_color(channels), suffix(channels);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const Index pix = Index(y) * out.width + x;
            const int last = out.last_index(y, x);
            if (last == 0) {
                continue;
            }
            const Scalar final_t = out.final_T(y, x);
            const Scalar coverage = out.alpha(y, x);
            g_color = has_color ? VecX<Scalar>(grads.color.row(pix).transpose()) : VecX<Scalar>::Zero(channels);
            Scalar g_alpha = has_alpha ? grads.alpha(y, x) : Scalar(0);
            Scalar g_depth = has_dacc ? grads.depth_acc(y, x) : Scalar(0);
            if (has_dexp && coverage > 0) {
                const Scalar ge = grads.depth_exp(y, x);
                g_depth += ge / coverage;
                g_alpha -= ge * out.depth_acc(y, x) / (coverage * coverage);
            }
            Scalar t = final_t;
            suffix = final_t * out.background;
            Scalar depth_suffix = 0;
            for (Index e = begin + last - 1; e >= begin; --e) {
                const int g = grid.entries[static_cast<std::size_t>(e)];
                const auto &p = ctx.projected[static_cast<std::size_t>(g)];
                const auto s = evaluate_alpha(p, ctx.opacities(g), x, y);
                if (!s.active) {
                    continue;
                }
                const Scalar one_minus = Scalar(1) - s.alpha;
                if (!(one_minus > 0)) {
                    throw NumericalError("composite_backward: alpha >= 1 in saved context");
                }
                t /= one_minus;
                const Scalar w = s.alpha * t;
                auto row = partial.row(e - begin);
                const auto c = ctx.colors.row(g).transpose();
                Scalar d_alpha = 0;
                for (int k = 0; k < channels; ++k) {
                    d_alpha += g_color(k) * (c(k) * t - suffix(k) / one_minus);
                    row(lay.color() + k) += w * g_color(k);
                }
                d_alpha += g_depth * (p.depth * t - depth_suffix / one_minus);
                d_alpha += g_alpha * final_t / one_minus;
                row(lay.depth()) += w * g_depth;
                suffix += w * c;
                depth_suffix += w * p.depth;
                if (s.clamped) {
                    continue;
                }
                row(lay.opacity()) += d_alpha * p.compensation * s.falloff;
                row(lay.compensation()) += d_alpha * ctx.opacities(g) * s.falloff;
                const Scalar d_power = -s.alpha * d_alpha;
                // power = 0.5 delta^T Y delta, delta = pixel - mean2d
                const Vec2<Scalar> d_mean = -d_power * Scalar(0.5) * ((p.conic + p.conic.transpose()) * s.delta);
                row(lay.mean2d()) += d_mean(0);
                row(lay.mean2d() + 1) += d_mean(1);
                row(lay.mean2d_abs()) += std::abs(d_mean(0));
                row(lay.mean2d_abs() + 1) += std::abs(d_mean(1));
                const Scalar half = Scalar(0.5) * d_power;
                row(lay.conic()) += half * s.delta(0) * s.delta(0);
                row(lay.conic() + 1) += half * s.delta(0) * s.delta(1);
                row(lay.conic() + 2) += half * s.delta(1) * s.delta(0);
                row(lay.conic() + 3) += half * s.delta(1) * s.delta(1);
            }
        }
    }
}

} // namespace detail

/// Back-to-front replay of every pixel; per-tile partials are reduced in tile
/// order so the result does not depend on the thread count.
template <typename Scalar>
Gaussian2DGrads<Scalar> composite_backward(const RenderContext<Scalar> &ctx, const RenderOutput<Scalar> &out,
                                           const ImageGradients<Scalar> &grads) {
    const Index pixels = Index(out.width) * out.height;
    if ((grads.color.size() != 0 && (grads.color.rows() != pixels || grads.color.cols() != out.channels)) ||
        (grads.alpha.size() != 0 && (grads.alpha.rows() != out.height || grads.alpha.cols() != out.width)) ||
        (grads.depth_acc.size() != 0 && (grads.depth_acc.rows() != out.height || grads.depth_acc.cols() != out.width)) ||
        (grads.depth_exp.size() != 0 && (grads.depth_exp.rows() != out.height || grads.depth_exp.cols() != out.width))) {
        throw ValidationError("composite_backward: gradient image shape does not match the render");
    }
    const Index n = static_cast<Index>(ctx.projected.size());
    const TileGrid &grid = ctx.grid;
    std::vector<RowsX<Scalar>> partials(static_cast<std::size_t>(grid.num_tiles()));
    parallel_for(grid.num_tiles(), worker_threads(ctx.settings.threads), [&](Index tile) {
        detail::composite_backward_tile(ctx, out, grads, tile, partials[static_cast<std::size_t>(tile)]);
    });

    Gaussian2DGrads<Scalar> g2;
    g2.resize(n, out.channels);
    const detail::PartialLayout lay{out.channels};
    for (Index tile = 0; tile < grid.num_tiles(); ++tile) {
        const auto &part = partials[static_cast<std::size_t>(tile)];
        for (Index j = 0; j < part.rows(); ++j) {
            const int g = grid.entries[static_cast<std::size_t>(grid.tile_begin(tile) + j)];
            const auto row = part.row(j);
            g2.color.row(g) += row.segment(lay.color(), out.channels);
            g2.opacity(g) += row(lay.opacity());
            g2.compensation(g) += row(lay.compensation());
            g2.mean2d.row(g) += row.segment(lay.mean2d(), 2);
            g2.mean2d_abs.row(g) += row.segment(lay.mean2d_abs(), 2);
            auto &cg = g2.conic[static_cast<std::size_t>(g)];
            cg(0, 0) += row(lay.conic());
            cg(0, 1) += row(lay.conic() + 1);
            cg(1, 0) += row(lay.conic() + 2);
            cg(1, 1) += row(lay.conic() + 3);
            g2.depth(g) += row(lay.depth());
        }
    }
    for (Index g = 0; g < n; ++g) {
        const auto &y = ctx.projected[static_cast<std::size_t>(g)].conic;
        // d(Y)/dx = -Y d(Sigma)/dx Y  =>  dL/dSigma = -Y^T G Y^T
        g2.cov2d[static_cast<std::size_t>(g)] =
            -y.transpose() * g2.conic[static_cast<std::size_t>(g)] * y.transpose();
    }
    return g2;
}

/// d compensation / d cov2d_raw scaled by dl_dcomp, for compensation = sqrt(det(A) / det(A + blur I)).
template <typename Scalar>
Mat2<Scalar> compensation_backward(const Mat2<Scalar> &cov2d_raw, Scalar blur, Scalar dl_dcomp) {
    const Mat2<Scalar> blurred = cov2d_raw + blur * Mat2<Scalar>::Identity();
    const Scalar det_raw = cov2d_raw.determinant();
    const Scalar det_blur = blurred.determinant();
    const Scalar comp = std::sqrt(std::max(Scalar(0), det_raw / det_blur));
    if (!(comp > Scalar(1e-12)) || dl_dcomp == Scalar(0)) {
        return Mat2<Scalar>::Zero();
    }
    // d det(X) / dX = adj(X)^T
    auto adj_t = [](const Mat2<Scalar> &m) {
        Mat2<Scalar> a;
        a << m(1, 1), -m(1, 0), -m(0, 1), m(0, 0);
        return a;
    };
    const Mat2<Scalar> d_ratio = adj_t(cov2d_raw) / det_blur - (det_raw / (det_blur * det_blur)) * adj_t(blurred);
    return (dl_dcomp / (Scalar(2) * comp)) * d_ratio;
}

template <typename Scalar> struct ProjectionGrads {
    Vec3<Scalar> mean3d = Vec3<Scalar>::Zero();
    Vec3<Scalar> cam_point = Vec3<Scalar>::Zero();
    Mat3<Scalar> cam_cov = Mat3<Scalar>::Zero();
    Mat3<Scalar> world_cov = Mat3<Scalar>::Zero();
    /// Gradient w.r.t. the camera rotation through T = J R only (the point path is separate).
    Mat3<Scalar> rotation_direct = Mat3<Scalar>::Zero();
};

/// Chains 2D mean, raw 2D covariance and depth gradients back to camera-space
/// and world-space quantities. cov2d_raw = T Sigma T^T with T = J R.
template <typename Scalar>
ProjectionGrads<Scalar> projection_backward(const Vec2<Scalar> &dl_dmean2d, const Mat2<Scalar> &dl_dcov2d,
                                            Scalar dl_ddepth, const Projected2D<Scalar> &projected,
                                            const Camera<Scalar> &camera, const Mat3<Scalar> &world_cov) {
    ProjectionGrads<Scalar> out;
    const Vec3<Scalar> &t = projected.cam_point;
    const Mat23<Scalar> j = projection_jacobian(t, camera);
    const Mat3<Scalar> &r = camera.rotation;
    const Mat23<Scalar> tm = j * r;
    const Mat2<Scalar> &g = dl_dcov2d;

    out.world_cov = tm.transpose() * g * tm;
    out.cam_cov = j.transpose() * g * j;
    const Mat23<Scalar> dl_dT = g * tm * world_cov.transpose() + g.transpose() * tm * world_cov;
    const Mat23<Scalar> dl_dJ = dl_dT * r.transpose();
    out.rotation_direct = j.transpose() * dl_dT;

    const Scalar iz = Scalar(1) / t(2), iz2 = iz * iz, iz3 = iz2 * iz;
    const Scalar fx = camera.fx, fy = camera.fy;
    // <dL/dJ, dJ/dt_i>
    Vec3<Scalar> dl_dt_cov;
    dl_dt_cov(0) = -fx * iz2 * dl_dJ(0, 2);
    dl_dt_cov(1) = -fy * iz2 * dl_dJ(1, 2);
    dl_dt_cov(2) = -fx * iz2 * dl_dJ(0, 0) + 2 * fx * t(0) * iz3 * dl_dJ(0, 2) - fy * iz2 * dl_dJ(1, 1) +
                   2 * fy * t(1) * iz3 * dl_dJ(1, 2);

    out.cam_point = j.transpose() * dl_dmean2d + dl_dt_cov + Vec3<Scalar>(0, 0, dl_ddepth);
    out.mean3d = r.transpose() * out.cam_point;
    return out;
}

template <typename Scalar> struct ScaleRotGrads {
    Vec4<Scalar> quat = Vec4<Scalar>::Zero();
    Vec3<Scalar> raw_scale = Vec3<Scalar>::Zero();
};

/// Gradients of Sigma = M M^T, M = R(q / |q|) diag(exp(raw_scale)), w.r.t. the raw q and raw_scale.
template <typename Scalar>
ScaleRotGrads<Scalar> scale_rot_backward(const Mat3<Scalar> &dl_dcov, const Vec4<Scalar> &q,
                                         const Vec3<Scalar> &raw_scale) {
    ScaleRotGrads<Scalar> out;
    const Scalar norm = q.norm();
    if (!(norm > Scalar(1e-12))) {
        throw DegenerateInputError("scale_rot_backward: quaternion has zero norm");
    }
    const Vec4<Scalar> u = q / norm;
    const Vec3<Scalar> scale = raw_scale.array().exp();
    const Mat3<Scalar> r = quat_to_rotmat(u);
    const Mat3<Scalar> m = r * scale.asDiagonal();
    const Mat3<Scalar> dl_dm = (dl_dcov + dl_dcov.transpose()) * m;
    const Mat3<Scalar> dl_dr = dl_dm * scale.asDiagonal();
    const Mat3<Scalar> dl_ds = r.transpose() * dl_dm;
    out.raw_scale = dl_ds.diagonal().cwiseProduct(scale);

    const Scalar w = u(0), x = u(1), y = u(2), z = u(3);
    Mat3<Scalar> dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    const Vec4<Scalar> dl_du(2 * (dl_dr.cwiseProduct(dw)).sum(), 2 * (dl_dr.cwiseProduct(dx)).sum(),
                             2 * (dl_dr.cwiseProduct(dy)).sum(), 2 * (dl_dr.cwiseProduct(dz)).sum());
    // u = q / |q|
    out.quat = (dl_du - u * u.dot(dl_du)) / norm;
    return out;
}

/// Assembles camera gradients from per-Gaussian camera-space point gradients
/// (t_n = R mu_n + t) plus the direct rotation term of the covariance path.
template <typename Scalar>
PoseGrads<Scalar> pose_backward(const std::vector<Vec3<Scalar>> &dl_dcam_points, const Rows<Scalar, 3> &means,
                                const Camera<Scalar> &camera, const Mat3<Scalar> &rotation_direct) {
    PoseGrads<Scalar> pg;
    Vec3<Scalar> world_sum = Vec3<Scalar>::Zero();
    for (std::size_t n = 0; n < dl_dcam_points.size(); ++n) {
        const Vec3<Scalar> &gt = dl_dcam_points[n];
        const Vec3<Scalar> mu = means.row(static_cast<Index>(n)).transpose();
        pg.translation += gt;
        pg.view_matrix.template block<3, 3>(0, 0) += gt * mu.transpose();
        world_sum += camera.rotation.transpose() * gt;
    }
    pg.view_matrix.template block<3, 1>(0, 3) = pg.translation;
    pg.view_matrix.template block<3, 3>(0, 0) += rotation_direct;
    pg.rotation = pg.view_matrix.template block<3, 3>(0, 0);
    const Mat3<Scalar> rt_g = camera.rotation.transpose() * pg.rotation;
    // <dL/dR, R [e_k]x> = <R^T dL/dR, [e_k]x>
    pg.local(0) = rt_g(2, 1) - rt_g(1, 2);
    pg.local(1) = rt_g(0, 2) - rt_g(2, 0);
    pg.local(2) = rt_g(1, 0) - rt_g(0, 1);
    pg.local.template tail<3>() = camera.rotation.transpose() * pg.translation;
    pg.center = -world_sum;
    return pg;
}

template <typename Scalar> struct BackwardResult {
    CloudGrads<Scalar> cloud;
    PoseGrads<Scalar> pose;
};

/// Full backward pass from image gradients to raw cloud parameters and camera pose.
/// The SH view direction is treated as constant.
template <typename Scalar>
BackwardResult<Scalar> render_backward(const GaussianCloud<Scalar> &cloud, const RenderResult<Scalar> &rendered,
                                       const ImageGradients<Scalar> &grads) {
    const auto &ctx = rendered.context;
    const auto &camera = ctx.camera;
    const Index n = cloud.size();
    if (static_cast<Index>(ctx.projected.size()) != n) {
        throw ValidationError("render_backward: cloud does not match the render context");
    }
    const auto g2 = composite_backward(ctx, rendered.output, grads);

    BackwardResult<Scalar> res;
    res.cloud = CloudGrads<Scalar>::zeros(cloud);
    res.cloud.mean2d = g2.mean2d;
    res.cloud.mean2d_abs = g2.mean2d_abs;
    std::vector<Vec3<Scalar>> dl_dcam(static_cast<std::size_t>(n), Vec3<Scalar>::Zero());
    std::vector<Mat3<Scalar>> rot_direct(static_cast<std::size_t>(n), Mat3<Scalar>::Zero());
    const int k_bases = cloud.sh_bases();

    parallel_for(n, worker_threads(ctx.settings.threads), [&](Index i) {
        const auto k = static_cast<std::size_t>(i);
        const auto &p = ctx.projected[k];
        if (!p.visible) {
            return;
        }
        const auto &ga = ctx.gaussians[k];
        Mat2<Scalar> dl_dcov_raw = g2.cov2d[k];
        if (ctx.settings.mode == RasterMode::Antialiased) {
            dl_dcov_raw += compensation_backward(p.cov2d_raw, ctx.settings.blur, g2.compensation(i));
        }
        const auto pg = projection_backward<Scalar>(g2.mean2d.row(i).transpose(), dl_dcov_raw, g2.depth(i), p,
                                                    camera, ga.covariance);
        dl_dcam[k] = pg.cam_point;
        rot_direct[k] = pg.rotation_direct;
        res.cloud.means.row(i) = pg.mean3d.transpose();
        const auto sr = scale_rot_backward<Scalar>(pg.world_cov, cloud.quats.row(i).transpose(),
                                                   cloud.raw_scales.row(i).transpose());
        res.cloud.quats.row(i) = sr.quat.transpose();
        res.cloud.raw_scales.row(i) = sr.raw_scale.transpose();
        res.cloud.raw_opacities(i) = g2.opacity(i) * ga.opacity * (Scalar(1) - ga.opacity);
        const RowsX<Scalar> dsh =
            sh_backward<Scalar>(g2.color.row(i).transpose(), ctx.view_dirs[k], ctx.sh_degree, k_bases);
        res.cloud.sh_coeffs.row(i) = Eigen::Map<const VecX<Scalar>>(dsh.data(), dsh.size()).transpose();
    });

    Mat3<Scalar> direct_sum = Mat3<Scalar>::Zero();
    for (const auto &m : rot_direct) {
        direct_sum += m;
    }
    res.pose = pose_backward(dl_dcam, cloud.means, camera, direct_sum);
    return res;
}

} // namespace splat
