// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "splat/rasterizer.hpp"
#include "splat/strategy.hpp"
#include "splat/synthetic.hpp"

using namespace splat;

namespace {

// width = height = 2 makes the half-extent scaling the identity.
ViewGradients view(const Rows<double, 2> &g) {
    ViewGradients v;
    v.mean2d = g;
    v.mean2d_abs = g.cwiseAbs();
    v.visible.assign(static_cast<std::size_t>(g.rows()), true);
    v.radius = VecX<double>::Ones(g.rows());
    v.width = v.height = 2;
    return v;
}

// Four Gaussians matching the threshold fixtures, scene extent 1.
GaussianCloud<double> fixture_cloud() {
    auto c = GaussianCloud<double>::zeros(4, 0, 3);
    for (Index i = 0; i < 4; ++i) {
        c.means.row(i) << double(i), 0, 3;
        c.raw_opacities(i) = logit(0.5);
    }
    c.raw_scales.row(0).setConstant(std::log(0.02));  // large, high grad -> split
    c.raw_scales.row(1).setConstant(std::log(0.005)); // small, high grad -> clone
    c.raw_scales.row(2).setConstant(std::log(0.005)); // low grad -> untouched
    c.raw_scales.row(3).setConstant(std::log(0.005));
    c.raw_opacities(3) = logit(0.004); // -> pruned
    return c;
}

StrategyState fixture_state() {
    StrategyState s(4);
    s.grad_accum << 3e-4, 3e-4, 1e-4, 0;
    s.count.setOnes();
    return s;
}

} // namespace

TEST(Accumulate, ZeroGradientsLeaveAccumulators) {
    StrategyState s(3);
    s.grad_accum << 1, 2, 3;
    accumulate(s, {view(Rows<double, 2>::Zero(3, 2))}, GradMode::Signed);
    EXPECT_EQ(s.grad_accum, VecX<double>((VecX<double>(3) << 1, 2, 3).finished()));
    EXPECT_EQ(s.count.sum(), 3);
}

TEST(Accumulate, GradientCollisions) {
    Rows<double, 2> g(1, 2);
    g << 3e-4, 4e-4;
    StrategyState signed_state(1), abs_state(1);
    accumulate(signed_state, {view(g), view(-g)}, GradMode::Signed);
    accumulate(abs_state, {view(g), view(-g)}, GradMode::Absolute);
    EXPECT_EQ(signed_state.grad_accum(0), 0.0);
    EXPECT_NEAR(abs_state.grad_accum(0), 2 * 5e-4, 1e-18);
    EXPECT_EQ(signed_state.count(0), 1);
}

TEST(Accumulate, ThreeFourFive) {
    Rows<double, 2> g(1, 2);
    g << 3e-4, 4e-4;
    StrategyState s(1);
    accumulate(s, {view(g)}, GradMode::Signed);
    EXPECT_NEAR(s.grad_accum(0), 5e-4, 1e-18);
}

TEST(Accumulate, PixelGradientsScaleByHalfExtent) {
    Rows<double, 2> g(1, 2);
    g << 1e-4, 0;
    auto v = view(g);
    v.width = 64;
    v.height = 32;
    StrategyState s(1);
    accumulate(s, {v}, GradMode::Signed);
    EXPECT_NEAR(s.grad_accum(0), 32e-4, 1e-15);
}

TEST(Accumulate, InvisibleGaussiansAreNotCounted) {
    auto v = view(Rows<double, 2>::Ones(2, 2));
    v.visible[1] = false;
    StrategyState s(2);
    accumulate(s, {v}, GradMode::Absolute);
    EXPECT_EQ(s.count(1), 0);
    EXPECT_EQ(s.grad_accum(1), 0.0);
}

TEST(Accumulate, LengthMismatchThrows) {
    StrategyState s(3);
    EXPECT_THROW(accumulate(s, {view(Rows<double, 2>::Zero(2, 2))}, GradMode::Signed), StateDesyncError);
}

// Absolute accumulation dominates signed accumulation over any sequence of views.
TEST(Accumulate, AbsoluteDominatesSigned) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1e-4);
    StrategyState a(20), b(20);
    for (int step = 0; step < 50; ++step) {
        std::vector<ViewGradients> views;
        for (int v = 0; v < 3; ++v) {
            Rows<double, 2> g(20, 2);
            for (Index i = 0; i < g.size(); ++i) {
                g.data()[i] = n(rng);
            }
            auto vg = view(g);
            vg.mean2d_abs = g.cwiseAbs() + Rows<double, 2>::Constant(20, 2, 1e-5); // per-pixel sums exceed the net sum
            views.push_back(vg);
        }
        accumulate(a, views, GradMode::Signed);
        accumulate(b, views, GradMode::Absolute);
        EXPECT_TRUE((b.grad_accum.array() >= a.grad_accum.array()).all());
    }
}

TEST(Adc, ThresholdFixtures) {
    auto cloud = fixture_cloud();
    auto state = fixture_state();
    std::mt19937_64 rng(0);
    const auto res = adc_refine(cloud, state, AdcConfig{}, 1.0, rng, false);
    EXPECT_EQ(res.report.split, 1);
    EXPECT_EQ(res.report.cloned, 1);
    EXPECT_EQ(res.report.pruned, 1);
    // rows: originals 1, 2 (3 pruned), clone of 1, two children of 0
    ASSERT_EQ(cloud.size(), 5);
    EXPECT_EQ(state.size(), 5);
    EXPECT_EQ(res.rows.source, (std::vector<Index>{1, 2, -1, -1, -1}));
    EXPECT_EQ(cloud.means.row(0), fixture_cloud().means.row(1));
    EXPECT_EQ(cloud.means.row(1), fixture_cloud().means.row(2));
    EXPECT_EQ(cloud.means.row(2), fixture_cloud().means.row(1));
    for (Index c = 3; c < 5; ++c) {
        EXPECT_NEAR(std::exp(cloud.raw_scales(c, 0)), 0.02 / 1.6, 1e-15);
        EXPECT_NE(cloud.means.row(c), fixture_cloud().means.row(0));
        EXPECT_LT((cloud.means.row(c) - fixture_cloud().means.row(0)).norm(), 0.02 * 6);
    }
    EXPECT_TRUE(state.grad_accum.isZero());
}

TEST(Adc, ScaleThresholdFollowsSceneExtent) {
    auto cloud = fixture_cloud();
    auto state = fixture_state();
    std::mt19937_64 rng(0);
    // With extent 4 the 0.02 Gaussian is small: clone instead of split.
    const auto res = adc_refine(cloud, state, AdcConfig{}, 4.0, rng, false);
    EXPECT_EQ(res.report.split, 0);
    EXPECT_EQ(res.report.cloned, 2);
}

TEST(Adc, BelowThresholdsIsIdentity) {
    auto scene = random_test_scene(4, 16, 16, 1);
    for (Index i = 0; i < scene.cloud.size(); ++i) {
        scene.cloud.raw_opacities(i) = std::max(scene.cloud.raw_opacities(i), logit(0.01));
    }
    StrategyState state(scene.cloud.size());
    state.grad_accum.setConstant(1.9e-4);
    state.count.setOnes();
    const auto before = scene.cloud;
    std::mt19937_64 rng(1);
    const auto res = adc_refine(scene.cloud, state, AdcConfig{}, 1.0, rng, false);
    EXPECT_TRUE(scene.cloud == before);
    EXPECT_TRUE(res.rows.is_identity());
}

TEST(Adc, ThresholdUsesMeanOverViews) {
    auto cloud = fixture_cloud();
    StrategyState state(4);
    state.grad_accum << 6e-4, 0, 0, 0;
    state.count << 4, 1, 1, 1; // mean 1.5e-4
    cloud.raw_opacities(3) = 0;
    std::mt19937_64 rng(0);
    const auto res = adc_refine(cloud, state, AdcConfig{}, 1.0, rng, false);
    EXPECT_EQ(res.report.split + res.report.cloned, 0);
}

TEST(Adc, PruningEverythingThrows) {
    auto cloud = GaussianCloud<double>::zeros(2);
    cloud.raw_opacities.setConstant(logit(0.001));
    StrategyState state(2);
    std::mt19937_64 rng(0);
    EXPECT_THROW(adc_refine(cloud, state, AdcConfig{}, 1.0, rng, false), DegenerateInputError);
}

TEST(Adc, ScheduleAndReset) {
    AdcConfig cfg;
    auto cloud = fixture_cloud();
    auto state = fixture_state();
    std::mt19937_64 rng(0);
    EXPECT_FALSE(adc_step(cloud, state, 100, cfg, 1.0, &rng).report.refined); // warmup
    EXPECT_FALSE(adc_step(cloud, state, 550, cfg, 1.0, &rng).report.refined);
    EXPECT_TRUE(adc_step(cloud, state, 600, cfg, 1.0, &rng).report.refined);
    EXPECT_FALSE(adc_step(cloud, state, 15000, cfg, 1.0, &rng).report.refined);

    auto c2 = fixture_cloud();
    StrategyState s2(4);
    const auto r = adc_step(c2, s2, 3000, cfg, 1.0, &rng);
    EXPECT_TRUE(r.report.reset);
    for (Index i = 0; i < c2.size(); ++i) {
        EXPECT_LE(sigmoid(c2.raw_opacities(i)), 0.01 + 1e-15);
    }
    reset_opacities(c2, 0.01);
    auto c3 = GaussianCloud<double>::zeros(1);
    c3.raw_opacities(0) = logit(0.005);
    reset_opacities(c3, 0.01);
    EXPECT_NEAR(sigmoid(c3.raw_opacities(0)), 0.005, 1e-15);
}

TEST(Adc, SplitRoughlyPreservesAppearance) {
    auto cloud = GaussianCloud<double>::zeros(1, 0, 3);
    cloud.means.row(0) << 0, 0, 4;
    cloud.raw_scales.row(0) << std::log(0.3), std::log(0.2), std::log(0.25);
    cloud.quats.row(0) << 0.9, 0.1, 0.3, -0.2;
    cloud.raw_opacities(0) = logit(0.8);
    cloud.sh(0, 0, 0) = 1;
    Camera<double> cam;
    cam.fx = cam.fy = 40;
    cam.cx = cam.cy = 16;
    cam.width = cam.height = 32;
    const auto before = render(cloud, cam, RenderSettings<double>{}).output;
    StrategyState state(1);
    state.grad_accum(0) = 1;
    state.count(0) = 1;
    std::mt19937_64 rng(3);
    adc_refine(cloud, state, AdcConfig{}, 1.0, rng, false);
    ASSERT_EQ(cloud.size(), 2);
    const auto after = render(cloud, cam, RenderSettings<double>{}).output;
    EXPECT_LT((before.color - after.color).cwiseAbs().mean(), 0.1);
}

TEST(Mcmc, RelocationCorrection) {
    const auto [o1, f1] = relocation_correction(0.7, 1);
    EXPECT_DOUBLE_EQ(o1, 0.7);
    EXPECT_DOUBLE_EQ(f1, 1.0);
    for (int n = 2; n <= 6; ++n) {
        const auto [o, f] = relocation_correction(0.6, n);
        EXPECT_NEAR(1 - std::pow(1 - o, n), 0.6, 1e-12);
        EXPECT_GT(f, 0.0);
    }
}

TEST(Mcmc, ZeroNoiseIsBitExact) {
    auto scene = random_test_scene(2, 16, 16, 0);
    const auto before = scene.cloud;
    McmcConfig cfg;
    cfg.noise_lr = 0;
    cfg.refine_every = 0;
    StrategyState state(before.size());
    std::mt19937_64 rng(1);
    mcmc_step(scene.cloud, state, 1, 1e-3, cfg, &rng);
    EXPECT_TRUE(scene.cloud == before);
    EXPECT_THROW(mcmc_step(scene.cloud, state, 1, 1e-3, cfg, nullptr), ConfigError);
}

TEST(Mcmc, NoiseStatisticsMatchCovariance) {
    auto cloud = GaussianCloud<double>::zeros(1);
    cloud.raw_scales.row(0) << std::log(0.5), std::log(0.2), std::log(1.0);
    cloud.quats.row(0) << 0.8, 0.3, -0.4, 0.2;
    McmcConfig cfg;
    cfg.noise_lr = 50;
    cfg.opacity_gating = false;
    const double lr = 1e-3;
    const Mat3<double> sigma = activate(cloud)[0].covariance;
    std::mt19937_64 rng(7);
    const int steps = 10000;
    Vec3<double> mean = Vec3<double>::Zero();
    Mat3<double> cov = Mat3<double>::Zero();
    for (int s = 0; s < steps; ++s) {
        const Vec3<double> before = cloud.means.row(0).transpose();
        mcmc_noise(cloud, lr, cfg, rng);
        const Vec3<double> d = cloud.means.row(0).transpose() - before;
        mean += d / steps;
        cov += d * d.transpose() / steps;
    }
    const Mat3<double> expected = std::pow(cfg.noise_lr * lr, 2) * sigma;
    EXPECT_LT((cov - expected).norm() / expected.norm(), 0.05);
    for (int k = 0; k < 3; ++k) {
        EXPECT_LT(std::abs(mean(k)), 4 * std::sqrt(expected(k, k) / steps));
    }
}

TEST(Mcmc, GateFreezesOpaqueGaussians) {
    auto cloud = GaussianCloud<double>::zeros(2);
    cloud.raw_opacities << logit(0.9), logit(0.001);
    McmcConfig cfg;
    std::mt19937_64 rng(1);
    const auto before = cloud;
    mcmc_noise(cloud, 1e-4, cfg, rng);
    EXPECT_LT((cloud.means.row(0) - before.means.row(0)).norm(), 1e-20);
    EXPECT_GT((cloud.means.row(1) - before.means.row(1)).norm(), 0.0);
}

TEST(Mcmc, CountNeverExceedsCap) {
    auto scene = random_test_scene(6, 64, 16, 1);
    McmcConfig cfg;
    cfg.cap_max = 256;
    cfg.refine_start = 0;
    cfg.refine_every = 1;
    StrategyState state(scene.cloud.size());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-8, 3);
    for (int step = 1; step < 120; ++step) {
        // kill a few at random so relocation has work
        for (Index i = 0; i < scene.cloud.size(); i += 7) {
            scene.cloud.raw_opacities(i) = u(rng);
        }
        const Index before = scene.cloud.size();
        const auto res = mcmc_step(scene.cloud, state, step, 1e-4, cfg, &rng);
        EXPECT_LE(scene.cloud.size(), cfg.cap_max);
        EXPECT_EQ(state.size(), scene.cloud.size());
        EXPECT_EQ(res.rows.size(), scene.cloud.size());
        if (before == cfg.cap_max) {
            EXPECT_EQ(scene.cloud.size(), before);
        }
        scene.cloud.validate();
    }
    EXPECT_EQ(scene.cloud.size(), cfg.cap_max);
}

TEST(Mcmc, RelocationMovesDeadOntoLive) {
    auto cloud = GaussianCloud<double>::zeros(3);
    cloud.means << 0, 0, 0, 1, 0, 0, 2, 0, 0;
    cloud.raw_opacities << logit(0.001), logit(0.9), logit(0.001);
    McmcConfig cfg;
    cfg.cap_max = 3;
    StrategyState state(3);
    std::mt19937_64 rng(0);
    const auto res = mcmc_refine(cloud, state, cfg, rng);
    EXPECT_EQ(res.report.relocated, 2);
    EXPECT_EQ(res.report.added, 0);
    for (Index i = 0; i < 3; ++i) {
        EXPECT_EQ(cloud.means.row(i), Vec3<double>(1, 0, 0).transpose());
    }
    // Three copies now composite to the original opacity.
    EXPECT_NEAR(1 - std::pow(1 - sigmoid(cloud.raw_opacities(0)), 3), 0.9, 1e-9);
    EXPECT_EQ(res.rows.source, (std::vector<Index>{-1, -1, -1}));
}

TEST(RowMap, RemapRows) {
    Rows<double, 2> m(3, 2);
    m << 1, 2, 3, 4, 5, 6;
    RowMap map;
    map.source = {2, -1, 0};
    const Rows<double, 2> r = remap_rows(m, map);
    EXPECT_EQ(r.row(0), m.row(2));
    EXPECT_TRUE(r.row(1).isZero());
    EXPECT_EQ(r.row(2), m.row(0));
}
