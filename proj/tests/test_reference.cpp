// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "splat/rasterizer.hpp"
#include "splat/reference.hpp"
#include "splat/synthetic.hpp"

using namespace splat;

TEST(FiniteDiff, Quadratic) {
    reference::FDSpec spec;
    spec.step = 1e-3;
    const auto r = reference::finite_diff([](const VecX<double> &x) { return x(0) * x(0); },
                                          VecX<double>::Constant(1, 3.0), spec);
    EXPECT_NEAR(r.gradient(0), 6.0, 1e-6);
}

TEST(FiniteDiff, LinearIsExactForAnyStep) {
    VecX<double> a(3);
    a << 0.5, -2, 4;
    for (double step : {1e-2, 1e-4, 1e-6}) {
        reference::FDSpec spec;
        spec.step = step;
        const auto r = reference::finite_diff([&](const VecX<double> &x) { return a.dot(x) + 1; },
                                              VecX<double>::Constant(3, 0.25), spec);
        EXPECT_LT((r.gradient - a).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(FiniteDiff, MaskAndNonFiniteReporting) {
    reference::FDSpec spec;
    spec.mask = {true, false};
    const auto r = reference::finite_diff(
        [](const VecX<double> &x) { return x(0) > 0 ? std::log(x(0)) : std::log(-x(0) - 1); }, VecX<double>::Zero(2),
        spec);
    EXPECT_TRUE(r.non_finite[0]);
    EXPECT_FALSE(r.non_finite[1]);
    EXPECT_EQ(r.gradient(1), 0.0);
    spec.step = 0;
    EXPECT_THROW(reference::finite_diff([](const VecX<double> &) { return 0.0; }, VecX<double>::Zero(1), spec),
                 ValidationError);
}

TEST(FiniteDiff, StepShrinksAcrossRegimeChange) {
    // |x| - 0.5 with a kink at 0.5; the signature marks the side.
    auto probe = [](const VecX<double> &x) {
        return reference::Probe{std::abs(x(0) - 0.5), x(0) > 0.5 ? 1u : 0u};
    };
    reference::FDSpec spec;
    spec.step = 1e-2;
    const auto r = reference::finite_diff(probe, VecX<double>::Constant(1, 0.505), spec);
    EXPECT_NEAR(r.gradient(0), 1.0, 1e-12);
    EXPECT_LT(r.step_used(0), 5e-3);
    EXPECT_FALSE(r.non_smooth[0]);
}

TEST(Reference, ConstantsAgreeWithRasterizer) {
    EXPECT_EQ(reference::kAlphaMax, raster::kAlphaMax);
    EXPECT_EQ(reference::kAlphaCut, raster::kAlphaCut);
    EXPECT_EQ(reference::kMinTransmittance, raster::kMinTransmittance);
    EXPECT_EQ(reference::kMaxExponent, raster::kMaxExponent);
}

TEST(Reference, EmptySceneIsBackground) {
    Camera<double> cam;
    cam.width = 5;
    cam.height = 3;
    cam.fx = cam.fy = 4;
    reference::Settings s;
    s.background = {0.1, 0.2, 0.3};
    const auto out = reference::brute_force_render(GaussianCloud<double>::zeros(0), cam, s);
    ASSERT_EQ(out.color.rows(), 15);
    for (Index i = 0; i < 15; ++i) {
        EXPECT_EQ(out.color(i, 0), 0.1);
        EXPECT_EQ(out.color(i, 1), 0.2);
        EXPECT_EQ(out.color(i, 2), 0.3);
    }
    EXPECT_TRUE(out.alpha.isZero());
}

// Two opaque-ish blobs centered on the same pixel, opacity 0.5 each: the hand
// composited example from the rasterizer tests.
TEST(Reference, TwoGaussianExample) {
    auto cloud = GaussianCloud<double>::zeros(2, 0, 3);
    cloud.means << 0, 0, 1, 0, 0, 2;
    cloud.raw_opacities.setZero(); // sigmoid(0) = 0.5
    cloud.raw_scales.setConstant(std::log(1e-4));
    // dc coefficient giving colors (1,0,0) and (0,1,0) after the +0.5 offset
    const double k = 0.5 / 0.28209479177387814;
    cloud.sh_coeffs << k, -k, -k, -k, k, -k;
    Camera<double> cam;
    cam.fx = cam.fy = 1;
    cam.cx = cam.cy = 0.5;
    cam.width = cam.height = 1;
    reference::Settings s;
    s.blur = 0.3;
    // Kernel value at the center pixel is exp(0) = 1; alpha = 0.5.
    const auto out = reference::brute_force_render(cloud, cam, s);
    EXPECT_NEAR(out.color(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(out.color(0, 1), 0.25, 1e-12);
    EXPECT_NEAR(out.color(0, 2), 0.0, 1e-12);
    EXPECT_NEAR(out.alpha(0, 0), 0.75, 1e-15);
    const auto tiled = render(cloud, cam, RenderSettings<double>{}).output;
    EXPECT_NEAR((tiled.color - out.color).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Reference, SignatureTracksContributors) {
    auto scene = random_test_scene(1, 16, 16, 0);
    reference::Settings s;
    const auto a = reference::brute_force_render(scene.cloud, scene.cameras[0], s);
    EXPECT_EQ(reference::contribution_signature(a), reference::contribution_signature(a));
    scene.cloud.raw_opacities.setConstant(-1e3);
    const auto b = reference::brute_force_render(scene.cloud, scene.cameras[0], s);
    EXPECT_NE(reference::contribution_signature(a), reference::contribution_signature(b));
}

TEST(Reference, RelativeError) {
    EXPECT_EQ(reference::relative_error(1.0, 1.0 + 1e-9, 1e-8), 0.0);
    EXPECT_NEAR(reference::relative_error(2.0, 1.0, 1e-8), 0.5, 1e-15);
}
