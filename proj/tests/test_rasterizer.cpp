// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "splat/rasterizer.hpp"
#include "splat/reference.hpp"
#include "splat/synthetic.hpp"

using namespace splat;

namespace {

Projected2D<double> disk(double mx, double my, double depth, double radius = 3) {
    Projected2D<double> p;
    p.mean2d = Vec2<double>(mx, my);
    p.depth = depth;
    p.cov2d_raw = p.cov2d = p.conic = Mat2<double>::Identity();
    p.compensation = 1;
    p.radius = radius;
    p.visible = true;
    return p;
}

reference::Settings reference_settings(const RenderSettings<double> &s, int sh_degree) {
    reference::Settings r;
    r.antialias = s.mode == RasterMode::Antialiased;
    r.blur = s.blur;
    r.sh_degree = sh_degree;
    r.background.assign(s.background.data(), s.background.data() + s.background.size());
    return r;
}

} // namespace

TEST(BinAndSort, InteriorGaussianHitsOneTile) {
    const auto grid = bin_and_sort<double>({disk(8, 8, 1)}, 32, 32, 16);
    EXPECT_EQ(grid.tiles_x, 2);
    EXPECT_EQ(grid.tiles_y, 2);
    EXPECT_EQ(grid.entries.size(), 1u);
    EXPECT_EQ(grid.tile_count(0), 1);
}

TEST(BinAndSort, CornerGaussianHitsFourTiles) {
    const auto grid = bin_and_sort<double>({disk(16, 16, 1, 2)}, 32, 32, 16);
    for (Index t = 0; t < 4; ++t) {
        EXPECT_EQ(grid.tile_count(t), 1) << "tile " << t;
    }
}

TEST(BinAndSort, InvisibleGaussiansAreDropped) {
    auto p = disk(8, 8, 1);
    p.visible = false;
    EXPECT_TRUE(bin_and_sort<double>({p}, 32, 32).entries.empty());
    EXPECT_THROW(bin_and_sort<double>({p}, 32, 32, 0), ValidationError);
}

TEST(BinAndSort, ListsMatchBoxOverlapAndAreDepthSorted) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(-10, 50), depth(0.1, 9), rad(0.5, 12);
    std::vector<Projected2D<double>> ps;
    for (int i = 0; i < 64; ++i) {
        ps.push_back(disk(pos(rng), pos(rng), depth(rng), rad(rng)));
    }
    ps[5].depth = ps[9].depth; // tie
    const int ts = 8, w = 40, h = 36;
    const auto grid = bin_and_sort(ps, w, h, ts);
    for (int ty = 0; ty < grid.tiles_y; ++ty) {
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const Index tile = Index(ty) * grid.tiles_x + tx;
            std::vector<int> expected;
            for (int g = 0; g < 64; ++g) {
                const auto &p = ps[static_cast<std::size_t>(g)];
                const bool overlap = p.mean2d(0) + p.radius >= tx * ts && p.mean2d(0) - p.radius < (tx + 1) * ts &&
                                     p.mean2d(1) + p.radius >= ty * ts && p.mean2d(1) - p.radius < (ty + 1) * ts;
                if (overlap) {
                    expected.push_back(g);
                }
            }
            std::stable_sort(expected.begin(), expected.end(), [&](int a, int b) {
                return ps[static_cast<std::size_t>(a)].depth < ps[static_cast<std::size_t>(b)].depth;
            });
            std::vector<int> got(grid.entries.begin() + grid.tile_begin(tile), grid.entries.begin() + grid.tile_end(tile));
            EXPECT_EQ(got, expected) << "tile " << tx << "," << ty;
        }
    }
}

TEST(EvaluateAlpha, Examples) {
    const auto c = evaluate_alpha(disk(3.5, 3.5, 1), 1.0, 3, 3);
    EXPECT_TRUE(c.active);
    EXPECT_TRUE(c.clamped);
    EXPECT_EQ(c.alpha, 0.999);

    // Delta (sqrt(2 ln 2), 0) under an identity covariance gives g = ln 2.
    const double dx = std::sqrt(2 * std::log(2.0));
    const auto half = evaluate_alpha(disk(3.5 - dx, 3.5, 1), 1.0, 3, 3);
    EXPECT_NEAR(half.alpha, 0.5, 1e-15);
    EXPECT_FALSE(half.clamped);

    EXPECT_FALSE(evaluate_alpha(disk(3.5, 3.5, 1), 0.0, 3, 3).active);
    EXPECT_EQ(evaluate_alpha(disk(3.5, 3.5, 1), 0.0, 3, 3).alpha, 0.0);
}

TEST(EvaluateAlpha, SkipsBelowCutoffAndOutsideThreeSigma) {
    // g = 4.6 lies past the 3-sigma ellipse even though o e^-g > 1/255.
    const double dx = std::sqrt(2 * 4.6);
    EXPECT_GT(std::exp(-4.6), raster::kAlphaCut);
    EXPECT_FALSE(evaluate_alpha(disk(3.5 - dx, 3.5, 1), 1.0, 3, 3).active);
    EXPECT_FALSE(evaluate_alpha(disk(3.5, 3.5, 1), 0.9 / 255, 3, 3).active);
    EXPECT_TRUE(evaluate_alpha(disk(3.5, 3.5, 1), 1.1 / 255, 3, 3).active);
}

TEST(CompositeForward, TwoGaussianHandCompositing) {
    const std::vector<Projected2D<double>> ps = {disk(0.5, 0.5, 1), disk(0.5, 0.5, 2)};
    RowsX<double> colors(2, 3);
    colors << 1, 0, 0, 0, 1, 0;
    const VecX<double> opacities = VecX<double>::Constant(2, 0.5);
    const auto grid = bin_and_sort(ps, 1, 1);
    const auto out = composite_forward(grid, ps, colors, opacities, VecX<double>(), 1, 1);
    EXPECT_NEAR(out.color(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.color(0, 1), 0.25, 1e-15);
    EXPECT_NEAR(out.color(0, 2), 0.0, 1e-15);
    EXPECT_NEAR(out.alpha(0, 0), 0.75, 1e-15);
    EXPECT_NEAR(out.final_T(0, 0), 0.25, 1e-15);
    EXPECT_EQ(out.n_contrib(0, 0), 2);
}

TEST(CompositeForward, DepthChannels) {
    const std::vector<Projected2D<double>> ps = {disk(0.5, 0.5, 2)};
    const RowsX<double> colors = RowsX<double>::Ones(1, 1);
    const auto out = composite_forward(bin_and_sort(ps, 1, 1), ps, colors, VecX<double>(VecX<double>::Constant(1, 0.5)),
                                       VecX<double>(), 1, 1);
    EXPECT_DOUBLE_EQ(out.depth_acc(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(out.depth_exp(0, 0), 2.0);
}

TEST(CompositeForward, BackgroundAndEarlyStop) {
    // Ten clamped Gaussians: T would fall below 1e-4 on the second, so only one composites.
    std::vector<Projected2D<double>> ps;
    for (int i = 0; i < 10; ++i) {
        ps.push_back(disk(0.5, 0.5, 1 + i));
    }
    const RowsX<double> colors = RowsX<double>::Ones(10, 2);
    VecX<double> bg(2);
    bg << 0.25, 0.75;
    const auto out = composite_forward(bin_and_sort(ps, 1, 1), ps, colors, VecX<double>(VecX<double>::Ones(10)), bg, 1, 1);
    EXPECT_EQ(out.n_contrib(0, 0), 1);
    EXPECT_NEAR(out.final_T(0, 0), 1e-3, 1e-15);
    EXPECT_NEAR(out.color(0, 0), 0.999 + 1e-3 * 0.25, 1e-15);
    EXPECT_THROW(composite_forward(bin_and_sort(ps, 1, 1), ps, colors, VecX<double>(VecX<double>::Ones(10)), VecX<double>(VecX<double>::Ones(3)), 1, 1),
                 ValidationError);
}

class RenderProperties : public ::testing::TestWithParam<int> {};

TEST_P(RenderProperties, MatchesBruteForceAndInvariantsHold) {
    const int seed = GetParam();
    const int degree = seed % 4;
    auto scene = random_test_scene(static_cast<std::uint64_t>(seed), 64, 32, degree);
    RenderSettings<double> s;
    s.mode = seed % 2 ? RasterMode::Antialiased : RasterMode::Classic;
    s.background = VecX<double>::Constant(3, 0.1 * (seed % 3));
    const auto &cam = scene.cameras[0];
    const auto r = render(scene.cloud, cam, s);
    const auto &o = r.output;
    const auto ref = reference::brute_force_render(scene.cloud, cam, reference_settings(s, degree));
    EXPECT_LT((o.color - ref.color).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((o.alpha - ref.alpha).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((o.depth_acc - ref.depth_acc).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((o.depth_exp - ref.depth_exp).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(o.n_contrib, ref.contributors);

    for (int y = 0; y < o.height; ++y) {
        for (int x = 0; x < o.width; ++x) {
            EXPECT_GE(o.alpha(y, x), 0.0);
            EXPECT_LE(o.alpha(y, x), 1.0);
            EXPECT_GT(o.final_T(y, x), 0.0);
            EXPECT_EQ(o.alpha(y, x) + o.final_T(y, x), 1.0);
            if (o.alpha(y, x) > 1e-12) {
                EXPECT_NEAR(o.depth_exp(y, x) * o.alpha(y, x), o.depth_acc(y, x), 1e-9);
            }
        }
    }

    // Single tile covering the image, and any thread count, give identical bits.
    RenderSettings<double> one = s;
    one.tile_size = 64;
    one.threads = 1;
    const auto single = render(scene.cloud, cam, one);
    EXPECT_EQ(single.output.color, o.color);
    EXPECT_EQ(single.output.depth_acc, o.depth_acc);
    RenderSettings<double> many = s;
    many.threads = 4;
    many.tile_size = 4;
    EXPECT_EQ(render(scene.cloud, cam, many).output.color, o.color);
}

TEST_P(RenderProperties, PermutationInvariant) {
    auto scene = random_test_scene(static_cast<std::uint64_t>(GetParam()) + 100, 48, 24, 1);
    std::vector<Index> perm(static_cast<std::size_t>(scene.cloud.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto shuffled = scene.cloud.select(perm);
    RenderSettings<double> s;
    const auto a = render(scene.cloud, scene.cameras[0], s).output;
    const auto b = render(shuffled, scene.cameras[0], s).output;
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.alpha, b.alpha);
}

TEST_P(RenderProperties, TransparentCloudShowsBackground) {
    auto scene = random_test_scene(static_cast<std::uint64_t>(GetParam()), 32, 16, 0);
    scene.cloud.raw_opacities.setConstant(-1e3);
    RenderSettings<double> s;
    s.background = VecX<double>(3);
    s.background << 0.2, 0.4, 0.6;
    const auto out = render(scene.cloud, scene.cameras[0], s).output;
    for (Index i = 0; i < out.color.rows(); ++i) {
        EXPECT_EQ(out.color.row(i), s.background.transpose());
    }
    EXPECT_TRUE(out.alpha.isZero());
}

INSTANTIATE_TEST_SUITE_P(Seeds, RenderProperties, ::testing::Range(0, 12));

TEST(Render, TransmittanceNonIncreasingAlongComposite) {
    auto scene = random_test_scene(77, 64, 32, 0);
    const auto r = render(scene.cloud, scene.cameras[0], RenderSettings<double>{});
    const auto &ctx = r.context;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            const Index tile = Index(y / 16) * ctx.grid.tiles_x + x / 16;
            double t = 1;
            for (Index e = ctx.grid.tile_begin(tile); e < ctx.grid.tile_begin(tile) + r.output.last_index(y, x); ++e) {
                const int g = ctx.grid.entries[static_cast<std::size_t>(e)];
                const auto s = evaluate_alpha(ctx.projected[static_cast<std::size_t>(g)], ctx.opacities(g), x, y);
                if (s.active) {
                    const double next = t * (1 - s.alpha);
                    EXPECT_LT(next, t);
                    EXPECT_GT(next, 0.0);
                    t = next;
                }
            }
            EXPECT_EQ(t, r.output.final_T(y, x));
        }
    }
}

// Density-based cull check: a Gaussian whose unnormalized density exceeds 1/255
// of its peak at some pixel inside its 3-sigma support must be binned there.
TEST(Render, CullingIsConservative) {
    for (int seed = 0; seed < 10; ++seed) {
        auto scene = random_test_scene(static_cast<std::uint64_t>(seed) + 500, 64, 32, 0);
        RenderSettings<double> s;
        s.tile_size = 8;
        const auto r = render(scene.cloud, scene.cameras[0], s);
        const auto &ctx = r.context;
        for (std::size_t g = 0; g < ctx.projected.size(); ++g) {
            const auto &p = ctx.projected[g];
            if (p.depth <= scene.cameras[0].near_plane) {
                continue;
            }
            for (int y = 0; y < 32; ++y) {
                for (int x = 0; x < 32; ++x) {
                    const Vec2<double> d = Vec2<double>(x + 0.5, y + 0.5) - p.mean2d;
                    const Mat2<double> inv = p.cov2d.inverse();
                    const double power = 0.5 * d.dot(inv * d);
                    if (power > raster::kMaxExponent || std::exp(-power) <= 1.0 / 255) {
                        continue;
                    }
                    ASSERT_TRUE(p.visible) << "seed " << seed << " gaussian " << g;
                    const Index tile = Index(y / 8) * ctx.grid.tiles_x + x / 8;
                    const auto first = ctx.grid.entries.begin() + ctx.grid.tile_begin(tile);
                    const auto last = ctx.grid.entries.begin() + ctx.grid.tile_end(tile);
                    EXPECT_NE(std::find(first, last, static_cast<int>(g)), last);
                }
            }
        }
    }
}

TEST(Render, SingleGaussianNearCamera) {
    GaussianCloud<double> cloud = GaussianCloud<double>::zeros(1, 0, 3);
    cloud.means.row(0) << 0, 0, 0.01;
    cloud.raw_scales.setConstant(std::log(0.2));
    cloud.quats.row(0) << 1, 0, 0, 0;
    cloud.raw_opacities(0) = 30; // opacity ~ 1
    Camera<double> cam;
    cam.fx = cam.fy = 1;
    cam.cx = cam.cy = 120;
    cam.width = cam.height = 240;
    // Depth 0.01 sits exactly on the default near plane, which culls it.
    EXPECT_TRUE(render(cloud, cam, RenderSettings<double>{}).output.alpha.isZero());
    cam.near_plane = 1e-3;
    const auto out = render(cloud, cam, RenderSettings<double>{}).output;
    EXPECT_GT(out.alpha(119, 119), out.alpha(0, 0));
    EXPECT_EQ(out.alpha(119, 119), out.alpha(120, 120));
    EXPECT_EQ(out.alpha(119, 120), out.alpha(120, 119));
    EXPECT_DOUBLE_EQ(out.depth_exp(120, 120), 0.01);
}

TEST(Render, FloatMatchesDouble) {
    auto scene = random_test_scene(5, 32, 16, 1);
    const auto d = render(scene.cloud, scene.cameras[0], RenderSettings<double>{}).output;
    const auto f = render(scene.cloud.cast<float>(), scene.cameras[0].cast<float>(), RenderSettings<float>{}).output;
    EXPECT_LT((d.color - f.color.cast<double>()).cwiseAbs().maxCoeff(), 1e-3);
}
