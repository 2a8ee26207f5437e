// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "splat/scene.hpp"
#include "splat/synthetic.hpp"

using namespace splat;

namespace {

Vec4<double> random_quat(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0, 1);
    return {n(rng), n(rng), n(rng), n(rng)};
}

} // namespace

TEST(QuatToRotmat, IdentityQuaternion) {
    EXPECT_TRUE(quat_to_rotmat<double>(Vec4<double>(1, 0, 0, 0)).isApprox(Mat3<double>::Identity(), 1e-15));
}

TEST(QuatToRotmat, HalfTurnAboutZ) {
    const Mat3<double> r = quat_to_rotmat<double>(Vec4<double>(0, 0, 0, 1));
    EXPECT_TRUE(r.isApprox(Vec3<double>(-1, -1, 1).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(QuatToRotmat, NormalizesInput) {
    EXPECT_TRUE(quat_to_rotmat<double>(Vec4<double>(2, 0, 0, 0)).isApprox(Mat3<double>::Identity(), 1e-15));
}

TEST(QuatToRotmat, ZeroNormThrows) {
    EXPECT_THROW(quat_to_rotmat<double>(Vec4<double>::Zero()), DegenerateInputError);
}

TEST(QuatToRotmat, MatchesEigenQuaternion) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Vec4<double> q = random_quat(rng);
        const Eigen::Quaterniond eq(q(0), q(1), q(2), q(3));
        EXPECT_LT((quat_to_rotmat(q) - eq.normalized().toRotationMatrix()).norm(), 1e-13);
    }
}

TEST(QuatToRotmat, ScaleInvarianceAndOrthonormality) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lam(1e-3, 1e3);
    for (int i = 0; i < 200; ++i) {
        const Vec4<double> q = random_quat(rng);
        const Mat3<double> r = quat_to_rotmat(q);
        EXPECT_LT((quat_to_rotmat<double>(lam(rng) * q) - r).norm(), 1e-12);
        EXPECT_LT((r * r.transpose() - Mat3<double>::Identity()).norm(), 1e-12);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    }
}

TEST(QuatToRotmat, RoundTripRecoversQuaternionUpToSign) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        const Vec4<double> q = random_quat(rng).normalized();
        const Vec4<double> back = rotmat_to_quat(quat_to_rotmat(q));
        EXPECT_LT(std::min((back - q).norm(), (back + q).norm()), 1e-9);
    }
}

TEST(Activate, UnitScaleIdentityRotation) {
    auto cloud = GaussianCloud<double>::zeros(1);
    const auto g = activate(cloud);
    EXPECT_TRUE(g[0].covariance.isApprox(Mat3<double>::Identity(), 1e-15));
    EXPECT_DOUBLE_EQ(g[0].opacity, 0.5);
}

TEST(Activate, LogScaleSquares) {
    auto cloud = GaussianCloud<double>::zeros(1);
    cloud.raw_scales(0, 0) = std::log(2.0);
    const auto g = activate(cloud);
    EXPECT_TRUE(g[0].covariance.isApprox(Vec3<double>(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-14));
}

TEST(Activate, CovarianceSpectrumIsSquaredScales) {
    std::mt19937_64 rng(5);
    const auto cloud = random_cloud(rng, 64, 0);
    const auto gs = activate(cloud);
    std::normal_distribution<double> n(0, 1);
    for (Index i = 0; i < cloud.size(); ++i) {
        const Mat3<double> &cov = gs[static_cast<std::size_t>(i)].covariance;
        EXPECT_LT((cov - cov.transpose()).norm(), 1e-15);
        Eigen::SelfAdjointEigenSolver<Mat3<double>> es(cov);
        Vec3<double> expected = cloud.raw_scales.row(i).transpose().array().exp().square();
        std::sort(expected.data(), expected.data() + 3);
        EXPECT_LT((es.eigenvalues() - expected).norm(), 1e-12 * expected.maxCoeff());
        for (int k = 0; k < 5; ++k) {
            const Vec3<double> x(n(rng), n(rng), n(rng));
            EXPECT_GT(x.dot(cov * x), 0.0);
        }
    }
}

TEST(Activate, RejectsNonFiniteAndZeroQuat) {
    auto cloud = GaussianCloud<double>::zeros(3);
    cloud.means(1, 2) = std::nan("");
    EXPECT_THROW(activate(cloud), ValidationError);
    cloud.means(1, 2) = 0;
    cloud.quats.row(2).setZero();
    EXPECT_THROW(activate(cloud), DegenerateInputError);
}

TEST(GaussianCloud, SelectAndAppend) {
    std::mt19937_64 rng(2);
    auto a = random_cloud(rng, 5, 1);
    auto b = random_cloud(rng, 3, 1);
    auto merged = a;
    merged.append(b);
    ASSERT_EQ(merged.size(), 8);
    EXPECT_EQ(merged.select({5, 6, 7}), b);
    EXPECT_EQ(merged.select({0, 1, 2, 3, 4}), a);
    EXPECT_EQ(merged.max_sh_degree(), 1);
}

TEST(Camera, ValidateRejectsBadRotation) {
    Camera<double> cam;
    cam.width = cam.height = 4;
    EXPECT_NO_THROW(cam.validate());
    cam.rotation(0, 0) = 1.1;
    EXPECT_THROW(cam.validate(), ValidationError);
    cam.rotation = Vec3<double>(1, 1, -1).asDiagonal();
    EXPECT_THROW(cam.validate(), ValidationError);
}

TEST(Camera, RetractStaysOnRotationManifold) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 0.3);
    Camera<double> cam;
    for (int i = 0; i < 100; ++i) {
        Vec6<double> xi;
        for (int k = 0; k < 6; ++k) {
            xi(k) = n(rng);
        }
        cam = retract(cam, xi);
        EXPECT_LT((cam.rotation * cam.rotation.transpose() - Mat3<double>::Identity()).norm(), 1e-12);
        EXPECT_NEAR(cam.rotation.determinant(), 1.0, 1e-12);
    }
    const auto same = retract(cam, Vec6<double>(Vec6<double>::Zero()));
    EXPECT_LT((same.rotation - cam.rotation).norm(), 1e-14);
    EXPECT_EQ(same.translation, cam.translation);
}
