// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Trainable Gaussian scene, camera model and parameter activations.
//
// The cloud stores raw (pre-activation) parameters:
//   scale    = exp(raw_scale)
//   opacity  = sigmoid(raw_opacity)
//   rotation = R(q / |q|), Hamilton convention, q = (w, x, y, z)
//   Sigma    = R S S^T R^T,  S = diag(scale)

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "splat/errors.hpp"
#include "splat/types.hpp"

namespace splat {

template <typename Scalar> inline Scalar sigmoid(Scalar x) {
    if (x >= Scalar(0)) {
        return Scalar(1) / (Scalar(1) + std::exp(-x));
    }
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
}

template <typename Scalar> inline Scalar logit(Scalar p) { return std::log(p / (Scalar(1) - p)); }

/// Number of SH basis functions for a given degree.
constexpr int sh_bases_for_degree(int degree) { return (degree + 1) * (degree + 1); }

template <typename Scalar> struct GaussianCloud {
    Rows<Scalar, 3> means;
    Rows<Scalar, 3> raw_scales;
    Rows<Scalar, 4> quats;
    VecX<Scalar> raw_opacities;
    /// N x (K * C); coefficient (k, c) of Gaussian n lives at (n, k * C + c).
    RowsX<Scalar> sh_coeffs;
    int channels = 3;

    GaussianCloud() { resize(0, 0, 3); }

    static GaussianCloud zeros(Index n, int sh_degree = 0, int channels = 3) {
        GaussianCloud cloud;
        cloud.resize(n, sh_degree, channels);
        return cloud;
    }

    void resize(Index n, int sh_degree, int num_channels) {
        channels = num_channels;
        means.setZero(n, 3);
        raw_scales.setZero(n, 3);
        quats.setZero(n, 4);
        quats.col(0).setOnes();
        raw_opacities.setZero(n);
        sh_coeffs.setZero(n, sh_bases_for_degree(sh_degree) * num_channels);
    }

    Index size() const { return means.rows(); }
    bool empty() const { return size() == 0; }
    int sh_bases() const { return channels > 0 ? static_cast<int>(sh_coeffs.cols()) / channels : 0; }
    int max_sh_degree() const {
        return static_cast<int>(std::lround(std::sqrt(static_cast<double>(sh_bases())))) - 1;
    }

    Scalar &sh(Index n, int k, int c) { return sh_coeffs(n, k * channels + c); }
    Scalar sh(Index n, int k, int c) const { return sh_coeffs(n, k * channels + c); }

    /// K x C view of one Gaussian's SH coefficients.
    auto sh_block(Index n) const {
        return Eigen::Map<const RowsX<Scalar>>(sh_coeffs.row(n).data(), sh_bases(), channels);
    }

    /// Checks shape agreement, finiteness and quaternion norms. Throws ValidationError.
    void validate() const {
        const Index n = size();
        if (raw_scales.rows() != n || quats.rows() != n || raw_opacities.size() != n ||
            sh_coeffs.rows() != n) {
            throw ValidationError("GaussianCloud: parameter arrays disagree in length");
        }
        if (channels <= 0 || sh_coeffs.cols() % channels != 0) {
            throw ValidationError("GaussianCloud: sh_coeffs column count is not a multiple of channels");
        }
        const int k = sh_bases();
        const int degree = max_sh_degree();
        if (degree < 0 || sh_bases_for_degree(degree) != k) {
            throw ValidationError("GaussianCloud: sh basis count " + std::to_string(k) +
                                  " is not a perfect square");
        }
        for (Index i = 0; i < n; ++i) {
            if (!means.row(i).allFinite() || !raw_scales.row(i).allFinite() ||
                !quats.row(i).allFinite() || !std::isfinite(raw_opacities(i)) ||
                !sh_coeffs.row(i).allFinite()) {
                throw ValidationError("GaussianCloud: non-finite parameter in Gaussian " +
                                      std::to_string(i));
            }
            if (quats.row(i).norm() <= Scalar(1e-12)) {
                throw DegenerateInputError("GaussianCloud: zero-norm quaternion in Gaussian " +
                                           std::to_string(i));
            }
        }
    }

    /// Rows listed in `indices`, in that order.
    GaussianCloud select(const std::vector<Index> &indices) const {
        GaussianCloud out;
        out.channels = channels;
        out.means = means(indices, Eigen::all);
        out.raw_scales = raw_scales(indices, Eigen::all);
        out.quats = quats(indices, Eigen::all);
        out.raw_opacities = raw_opacities(indices);
        out.sh_coeffs = sh_coeffs(indices, Eigen::all);
        return out;
    }

    void append(const GaussianCloud &other) {
        if (other.channels != channels || other.sh_coeffs.cols() != sh_coeffs.cols()) {
            throw ValidationError("GaussianCloud::append: incompatible SH layout");
        }
        auto stack = [](auto &dst, const auto &src) {
            using M = std::decay_t<decltype(dst)>;
            M merged(dst.rows() + src.rows(), dst.cols());
            merged << dst, src;
            dst = std::move(merged);
        };
        stack(means, other.means);
        stack(raw_scales, other.raw_scales);
        stack(quats, other.quats);
        stack(raw_opacities, other.raw_opacities);
        stack(sh_coeffs, other.sh_coeffs);
    }

    template <typename T> GaussianCloud<T> cast() const {
        GaussianCloud<T> out;
        out.channels = channels;
        out.means = means.template cast<T>();
        out.raw_scales = raw_scales.template cast<T>();
        out.quats = quats.template cast<T>();
        out.raw_opacities = raw_opacities.template cast<T>();
        out.sh_coeffs = sh_coeffs.template cast<T>();
        return out;
    }

    bool operator==(const GaussianCloud &o) const {
        return channels == o.channels && means == o.means && raw_scales == o.raw_scales &&
               quats == o.quats && raw_opacities == o.raw_opacities && sh_coeffs == o.sh_coeffs;
    }
};

/// Pinhole camera with a world-to-camera transform x_cam = R x_world + t.
template <typename Scalar> struct Camera {
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Scalar fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;
    Scalar near_plane = Scalar(0.01);

    /// Camera center in world coordinates.
    Vec3<Scalar> center() const { return -rotation.transpose() * translation; }

    Mat3<Scalar> intrinsics() const {
        Mat3<Scalar> k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }

    void validate() const {
        const Scalar ortho_err = (rotation * rotation.transpose() - Mat3<Scalar>::Identity()).norm();
        const Scalar ortho_tol = sizeof(Scalar) >= sizeof(double) ? Scalar(1e-9) : Scalar(1e-5);
        if (!rotation.allFinite() || !translation.allFinite() || !(ortho_err <= ortho_tol) ||
            rotation.determinant() < Scalar(0)) {
            throw ValidationError("Camera: rotation is not a proper orthonormal matrix");
        }
        if (!(fx > 0) || !(fy > 0) || !std::isfinite(cx) || !std::isfinite(cy)) {
            throw ValidationError("Camera: focal lengths must be positive and the principal point finite");
        }
        if (width < 1 || height < 1) {
            throw ValidationError("Camera: image dimensions must be at least 1x1");
        }
        if (!(near_plane > 0)) {
            throw ValidationError("Camera: near_plane must be positive");
        }
    }

    template <typename T> Camera<T> cast() const {
        Camera<T> out;
        out.rotation = rotation.template cast<T>();
        out.translation = translation.template cast<T>();
        out.fx = T(fx);
        out.fy = T(fy);
        out.cx = T(cx);
        out.cy = T(cy);
        out.width = width;
        out.height = height;
        out.near_plane = T(near_plane);
        return out;
    }
};

/// Rotation matrix of the normalized quaternion (w, x, y, z).
template <typename Scalar> Mat3<Scalar> quat_to_rotmat(const Vec4<Scalar> &q) {
    const Scalar norm = q.norm();
    if (!(norm > Scalar(1e-12))) {
        throw DegenerateInputError("quat_to_rotmat: quaternion has zero norm");
    }
    const Vec4<Scalar> u = q / norm;
    const Scalar w = u(0), x = u(1), y = u(2), z = u(3);
    Mat3<Scalar> r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Unit quaternion (w, x, y, z) with w >= 0 for a proper rotation matrix.
template <typename Scalar> Vec4<Scalar> rotmat_to_quat(const Mat3<Scalar> &r) {
    const Eigen::Quaternion<Scalar> q(r);
    Vec4<Scalar> out(q.w(), q.x(), q.y(), q.z());
    out.normalize();
    return out(0) < 0 ? Vec4<Scalar>(-out) : out;
}

template <typename Scalar> Mat3<Scalar> skew(const Vec3<Scalar> &v) {
    Mat3<Scalar> m;
    m << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
    return m;
}

/// exp([w]x) via Rodrigues.
template <typename Scalar> Mat3<Scalar> so3_exp(const Vec3<Scalar> &w) {
    const Scalar theta = w.norm();
    if (theta < Scalar(1e-12)) {
        return Mat3<Scalar>::Identity() + skew(w);
    }
    return Eigen::AngleAxis<Scalar>(theta, w / theta).toRotationMatrix();
}

template <typename Scalar> Vec3<Scalar> so3_log(const Mat3<Scalar> &r) {
    const Eigen::AngleAxis<Scalar> aa(r);
    return aa.angle() * aa.axis();
}

/// Nearest rotation (polar factor) of a near-orthonormal matrix.
template <typename Scalar> Mat3<Scalar> orthonormalize(const Mat3<Scalar> &m) {
    const Eigen::JacobiSVD<Mat3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3<Scalar> u = svd.matrixU();
    const Mat3<Scalar> v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0) {
        u.col(2) = -u.col(2);
    }
    return u * v.transpose();
}

/// Applies the local pose correction xi = (w, d): R' = R exp([w]x), t' = t + R d.
template <typename Scalar> Camera<Scalar> retract(const Camera<Scalar> &camera, const Vec6<Scalar> &xi) {
    Camera<Scalar> out = camera;
    out.rotation = orthonormalize<Scalar>(camera.rotation * so3_exp<Scalar>(xi.template head<3>()));
    out.translation = camera.translation + camera.rotation * xi.template tail<3>();
    return out;
}

/// Activated parameters of one Gaussian.
template <typename Scalar> struct ActivatedGaussian {
    Vec3<Scalar> scale;
    Scalar opacity;
    Vec4<Scalar> quat; // unit
    Mat3<Scalar> rotation;
    Mat3<Scalar> covariance;
};

template <typename Scalar>
ActivatedGaussian<Scalar> activate_one(const GaussianCloud<Scalar> &cloud, Index n) {
    ActivatedGaussian<Scalar> g;
    g.scale = cloud.raw_scales.row(n).transpose().array().exp();
    g.opacity = sigmoid(cloud.raw_opacities(n));
    const Vec4<Scalar> q = cloud.quats.row(n).transpose();
    g.rotation = quat_to_rotmat(q);
    g.quat = q / q.norm();
    const Mat3<Scalar> m = g.rotation * g.scale.asDiagonal();
    g.covariance = m * m.transpose();
    return g;
}

/// Activates every Gaussian of a validated cloud.
template <typename Scalar>
std::vector<ActivatedGaussian<Scalar>> activate(const GaussianCloud<Scalar> &cloud) {
    cloud.validate();
    std::vector<ActivatedGaussian<Scalar>> out;
    out.reserve(static_cast<std::size_t>(cloud.size()));
    for (Index n = 0; n < cloud.size(); ++n) {
        out.push_back(activate_one(cloud, n));
    }
    return out;
}

} // namespace splat
