// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Real spherical harmonics up to degree 3 with the +0.5 color offset used by
// the common 3DGS file layout.

#pragma once

#include <array>

#include "splat/errors.hpp"
#include "splat/scene.hpp"

namespace splat {

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kShC2 = {1.0925484305920792, -1.0925484305920792,
                                                0.31539156525252005, -1.0925484305920792,
                                                0.5462742152960396};
inline constexpr std::array<double, 7> kShC3 = {-0.5900435899266435, 2.890611442640554,
                                                -0.4570457994644658, 0.3731763325901154,
                                                -0.4570457994644658, 1.445305721320277,
                                                -0.5900435899266435};

/// Basis values Y_k(dir) for k < (degree+1)^2; remaining entries are zero.
template <typename Scalar> std::array<Scalar, 16> sh_basis(const Vec3<Scalar> &dir, int degree) {
    std::array<Scalar, 16> y{};
    y[0] = Scalar(kShC0);
    if (degree < 1) {
        return y;
    }
    const Scalar x = dir(0), yy = dir(1), z = dir(2);
    y[1] = -Scalar(kShC1) * yy;
    y[2] = Scalar(kShC1) * z;
    y[3] = -Scalar(kShC1) * x;
    if (degree < 2) {
        return y;
    }
    const Scalar xx = x * x, y2 = yy * yy, zz = z * z;
    const Scalar xy = x * yy, yz = yy * z, xz = x * z;
    y[4] = Scalar(kShC2[0]) * xy;
    y[5] = Scalar(kShC2[1]) * yz;
    y[6] = Scalar(kShC2[2]) * (2 * zz - xx - y2);
    y[7] = Scalar(kShC2[3]) * xz;
    y[8] = Scalar(kShC2[4]) * (xx - y2);
    if (degree < 3) {
        return y;
    }
    y[9] = Scalar(kShC3[0]) * yy * (3 * xx - y2);
    y[10] = Scalar(kShC3[1]) * xy * z;
    y[11] = Scalar(kShC3[2]) * yy * (4 * zz - xx - y2);
    y[12] = Scalar(kShC3[3]) * z * (2 * zz - 3 * xx - 3 * y2);
    y[13] = Scalar(kShC3[4]) * x * (4 * zz - xx - y2);
    y[14] = Scalar(kShC3[5]) * z * (xx - y2);
    y[15] = Scalar(kShC3[6]) * x * (xx - 3 * y2);
    return y;
}

inline void check_sh_degree(int degree, Index available_bases) {
    if (degree < 0 || degree > 3) {
        throw ValidationError("sh: degree must be in [0, 3], got " + std::to_string(degree));
    }
    if (available_bases < sh_bases_for_degree(degree)) {
        throw ValidationError("sh: degree " + std::to_string(degree) + " needs " +
                              std::to_string(sh_bases_for_degree(degree)) + " coefficients, have " +
                              std::to_string(available_bases));
    }
}

/// color_c = 0.5 + sum_k Y_k(dir) coeffs(k, c). `coeffs` is K x C. No clamping.
template <typename Scalar, typename Derived>
VecX<Scalar> sh_eval(const Vec3<Scalar> &dir, const Eigen::MatrixBase<Derived> &coeffs, int degree) {
    check_sh_degree(degree, coeffs.rows());
    const auto y = sh_basis(dir, degree);
    const int k_used = sh_bases_for_degree(degree);
    VecX<Scalar> color = VecX<Scalar>::Constant(coeffs.cols(), Scalar(0.5));
    for (int k = 0; k < k_used; ++k) {
        color += y[static_cast<std::size_t>(k)] * coeffs.row(k).transpose();
    }
    return color;
}

/// Transpose of sh_eval in the coefficients: K x C gradient (rows past the degree are zero).
template <typename Scalar>
RowsX<Scalar> sh_backward(const VecX<Scalar> &dl_dcolor, const Vec3<Scalar> &dir, int degree,
                          int num_bases) {
    check_sh_degree(degree, num_bases);
    const auto y = sh_basis(dir, degree);
    RowsX<Scalar> grad = RowsX<Scalar>::Zero(num_bases, dl_dcolor.size());
    for (int k = 0; k < sh_bases_for_degree(degree); ++k) {
        grad.row(k) = y[static_cast<std::size_t>(k)] * dl_dcolor.transpose();
    }
    return grad;
}

} // namespace splat
