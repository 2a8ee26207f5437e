// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// World-space Gaussian -> image-space 2D Gaussian.

#pragma once

#include <algorithm>
#include <cmath>

#include "splat/scene.hpp"

namespace splat {

enum class RasterMode { Classic, Antialiased };

inline constexpr double kDefaultBlur = 0.3;

template <typename Scalar> struct Projected2D {
    Vec3<Scalar> cam_point = Vec3<Scalar>::Zero();
    Vec2<Scalar> mean2d = Vec2<Scalar>::Zero();
    Scalar depth = 0;
    Mat2<Scalar> cov2d_raw = Mat2<Scalar>::Zero(); // J Sigma_cam J^T, before blur
    Mat2<Scalar> cov2d = Mat2<Scalar>::Zero();     // after blur
    Mat2<Scalar> conic = Mat2<Scalar>::Zero();     // inverse of cov2d
    Scalar compensation = 1;
    Scalar radius = 0;
    bool visible = false;
};

template <typename Scalar> struct CameraSpace {
    Vec3<Scalar> point;
    Mat3<Scalar> cov;
};

template <typename Scalar>
CameraSpace<Scalar> world_to_camera(const Vec3<Scalar> &mean, const Mat3<Scalar> &cov,
                                    const Camera<Scalar> &camera) {
    return {camera.rotation * mean + camera.translation,
            camera.rotation * cov * camera.rotation.transpose()};
}

template <typename Scalar> struct PointProjection {
    Vec2<Scalar> mean2d = Vec2<Scalar>::Zero();
    Scalar depth = 0;
    bool in_front = false;
};

/// Pinhole projection to continuous image coordinates. A point at or behind
/// the camera plane is reported with in_front = false.
template <typename Scalar>
PointProjection<Scalar> project_point(const Vec3<Scalar> &t, const Camera<Scalar> &camera) {
    PointProjection<Scalar> p;
    p.depth = t(2);
    if (!(t(2) > 0)) {
        return p;
    }
    p.in_front = true;
    p.mean2d = Vec2<Scalar>(camera.fx * t(0) / t(2) + camera.cx, camera.fy * t(1) / t(2) + camera.cy);
    return p;
}

/// d(mean2d)/d(t), including the focal lengths.
template <typename Scalar>
Mat23<Scalar> projection_jacobian(const Vec3<Scalar> &t, const Camera<Scalar> &camera) {
    const Scalar iz = Scalar(1) / t(2);
    const Scalar iz2 = iz * iz;
    Mat23<Scalar> j;
    j << camera.fx * iz, 0, -camera.fx * t(0) * iz2, 0, camera.fy * iz, -camera.fy * t(1) * iz2;
    return j;
}

template <typename Scalar>
Mat2<Scalar> project_covariance(const Mat23<Scalar> &j, const Mat3<Scalar> &cam_cov) {
    return j * cam_cov * j.transpose();
}

template <typename Scalar> struct AntialiasResult {
    Mat2<Scalar> cov2d;
    Scalar compensation;
};

/// Adds blur * I to the covariance. In antialiased mode the opacity
/// compensation sqrt(det(raw) / det(raw + blur I)) is returned, else 1.
template <typename Scalar>
AntialiasResult<Scalar> apply_antialias(const Mat2<Scalar> &cov2d_raw, RasterMode mode, Scalar blur) {
    if (blur < 0) {
        throw ValidationError("apply_antialias: blur must be non-negative");
    }
    AntialiasResult<Scalar> out{cov2d_raw + blur * Mat2<Scalar>::Identity(), Scalar(1)};
    const Scalar det_blur = out.cov2d.determinant();
    if (!(det_blur > 0)) {
        throw NumericalError("apply_antialias: covariance is singular after blur");
    }
    if (mode == RasterMode::Antialiased) {
        const Scalar det_raw = cov2d_raw.determinant();
        out.compensation = std::sqrt(std::max(Scalar(0), det_raw / det_blur));
    }
    return out;
}

template <typename Scalar> struct CullResult {
    bool visible = false;
    Scalar radius = 0;
};

/// 3-sigma extent of the largest principal axis; invisible when behind the
/// near plane or when the extent box misses the image rectangle.
template <typename Scalar>
CullResult<Scalar> cull(Scalar depth, const Vec2<Scalar> &mean2d, const Mat2<Scalar> &cov2d,
                        const Camera<Scalar> &camera) {
    CullResult<Scalar> out;
    if (!(depth > camera.near_plane)) {
        return out;
    }
    const Scalar mid = Scalar(0.5) * (cov2d(0, 0) + cov2d(1, 1));
    const Scalar det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
    const Scalar lambda_max = mid + std::sqrt(std::max(Scalar(0), mid * mid - det));
    out.radius = Scalar(3) * std::sqrt(std::max(Scalar(0), lambda_max));
    out.visible = mean2d(0) + out.radius > 0 && mean2d(0) - out.radius < camera.width &&
                  mean2d(1) + out.radius > 0 && mean2d(1) - out.radius < camera.height;
    return out;
}

/// Full per-Gaussian projection. Never throws for geometric reasons:
/// degenerate or off-screen Gaussians come back with visible = false.
template <typename Scalar>
Projected2D<Scalar> project_gaussian(const Vec3<Scalar> &mean, const Mat3<Scalar> &cov,
                                     const Camera<Scalar> &camera, RasterMode mode, Scalar blur) {
    Projected2D<Scalar> p;
    const auto cam = world_to_camera(mean, cov, camera);
    p.cam_point = cam.point;
    p.depth = cam.point(2);
    if (!(p.depth > camera.near_plane)) {
        return p;
    }
    p.mean2d = project_point(cam.point, camera).mean2d;
    const Mat23<Scalar> j = projection_jacobian(cam.point, camera);
    p.cov2d_raw = project_covariance(j, cam.cov);
    p.cov2d = p.cov2d_raw + blur * Mat2<Scalar>::Identity();
    const Scalar det = p.cov2d.determinant();
    if (!(det > 0) || !std::isfinite(det)) {
        return p;
    }
    const auto aa = apply_antialias(p.cov2d_raw, mode, blur);
    p.cov2d = aa.cov2d;
    p.compensation = aa.compensation;
    p.conic << p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det, -p.cov2d(1, 0) / det, p.cov2d(0, 0) / det;
    const auto c = cull(p.depth, p.mean2d, p.cov2d, camera);
    p.radius = c.radius;
    p.visible = c.visible;
    return p;
}

} // namespace splat
