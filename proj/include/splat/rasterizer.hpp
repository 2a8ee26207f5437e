// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Tile-binned, depth-sorted front-to-back alpha compositing.
//
// Per pixel, over the depth-sorted contributors n = 1..N:
//   C = sum c_n a_n T_n + T_final * background,   T_n = prod_{m<n} (1 - a_m)
//   d_acc = sum d_n a_n T_n,   d_exp = d_acc / (1 - T_final)

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "splat/parallel.hpp"
#include "splat/projection.hpp"
#include "splat/sh.hpp"

namespace splat {

namespace raster {
inline constexpr double kAlphaMax = 0.999;
inline constexpr double kAlphaCut = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
/// Contributions are limited to the 3-sigma ellipse, i.e. 0.5 * mahalanobis^2 <= 4.5,
/// which lies inside the box used for tile binning.
inline constexpr double kMaxExponent = 4.5;
} // namespace raster

template <typename Scalar> struct RenderSettings {
    RasterMode mode = RasterMode::Classic;
    Scalar blur = Scalar(kDefaultBlur);
    int tile_size = 16;
    /// SH degree used for color; negative selects the cloud's maximum.
    int sh_degree = -1;
    /// Empty means black.
    VecX<Scalar> background;
    int threads = 0;
};

struct TileGrid {
    int tile_size = 16;
    int tiles_x = 0, tiles_y = 0;
    std::vector<Index> offsets; // tiles + 1
    std::vector<int> entries;   // Gaussian indices, each tile sorted front to back

    Index num_tiles() const { return Index(tiles_x) * tiles_y; }
    Index tile_begin(Index tile) const { return offsets[static_cast<std::size_t>(tile)]; }
    Index tile_end(Index tile) const { return offsets[static_cast<std::size_t>(tile) + 1]; }
    Index tile_count(Index tile) const { return tile_end(tile) - tile_begin(tile); }
};

/// Inclusive tile index range covered by [lo, hi] along one axis.
inline std::pair<int, int> tile_span(double lo, double hi, int tile_size, int tiles) {
    const int first = std::max(0, static_cast<int>(std::floor(lo / tile_size)));
    const int last = std::min(tiles - 1, static_cast<int>(std::floor(hi / tile_size)));
    return {first, last};
}

/// Bins visible Gaussians into tiles by their 3-sigma box. Lists are ordered by
/// (depth, index).
template <typename Scalar>
TileGrid bin_and_sort(const std::vector<Projected2D<Scalar>> &projected, int width, int height,
                      int tile_size = 16) {
    if (tile_size < 1) {
        throw ValidationError("bin_and_sort: tile_size must be positive");
    }
    TileGrid grid;
    grid.tile_size = tile_size;
    grid.tiles_x = (width + tile_size - 1) / tile_size;
    grid.tiles_y = (height + tile_size - 1) / tile_size;

    std::vector<int> order;
    for (std::size_t i = 0; i < projected.size(); ++i) {
        if (projected[i].visible) {
            order.push_back(static_cast<int>(i));
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return projected[static_cast<std::size_t>(a)].depth < projected[static_cast<std::size_t>(b)].depth;
    });

    auto for_each_tile = [&](int g, auto &&fn) {
        const auto &p = projected[static_cast<std::size_t>(g)];
        const double mx = static_cast<double>(p.mean2d(0)), my = static_cast<double>(p.mean2d(1));
        const double r = static_cast<double>(p.radius);
        const auto [x0, x1] = tile_span(mx - r, mx + r, tile_size, grid.tiles_x);
        const auto [y0, y1] = tile_span(my - r, my + r, tile_size, grid.tiles_y);
        for (int ty = y0; ty <= y1; ++ty) {
            for (int tx = x0; tx <= x1; ++tx) {
                fn(Index(ty) * grid.tiles_x + tx);
            }
        }
    };

    std::vector<Index> counts(static_cast<std::size_t>(grid.num_tiles()), 0);
    for (int g : order) {
        for_each_tile(g, [&](Index t) { ++counts[static_cast<std::size_t>(t)]; });
    }
    grid.offsets.assign(counts.size() + 1, 0);
    std::partial_sum(counts.begin(), counts.end(), grid.offsets.begin() + 1);
    grid.entries.resize(static_cast<std::size_t>(grid.offsets.back()));
    std::vector<Index> cursor(grid.offsets.begin(), grid.offsets.end() - 1);
    for (int g : order) {
        for_each_tile(g, [&](Index t) { grid.entries[static_cast<std::size_t>(cursor[static_cast<std::size_t>(t)]++)] = g; });
    }
    return grid;
}

template <typename Scalar> struct AlphaSample {
    Scalar alpha = 0;
    Scalar falloff = 0; // exp(-g)
    Vec2<Scalar> delta = Vec2<Scalar>::Zero();
    bool active = false;
    bool clamped = false;
};

/// Alpha of a 2D Gaussian at the center of pixel (px, py).
template <typename Scalar>
AlphaSample<Scalar> evaluate_alpha(const Projected2D<Scalar> &g, Scalar opacity, int px, int py) {
    AlphaSample<Scalar> s;
    s.delta = Vec2<Scalar>(Scalar(px) + Scalar(0.5), Scalar(py) + Scalar(0.5)) - g.mean2d;
    const Scalar power = Scalar(0.5) * s.delta.dot(g.conic * s.delta);
    if (!(power <= Scalar(raster::kMaxExponent))) {
        return s;
    }
    s.falloff = std::exp(-power);
    const Scalar raw = opacity * g.compensation * s.falloff;
    if (raw < Scalar(raster::kAlphaCut)) {
        return s;
    }
    s.active = true;
    s.clamped = raw > Scalar(raster::kAlphaMax);
    s.alpha = s.clamped ? Scalar(raster::kAlphaMax) : raw;
    return s;
}

template <typename Scalar> struct RenderOutput {
    int width = 0, height = 0, channels = 0;
    RowsX<Scalar> color; // (H * W) x C, pixel y * W + x
    Image<Scalar> alpha, depth_acc, depth_exp, final_T;
    CountImage n_contrib;  // Gaussians composited into the pixel
    CountImage last_index; // one past the last composited entry of the tile list
    VecX<Scalar> background;

    auto pixel(int x, int y) const { return color.row(Index(y) * width + x); }

    /// Channel c as an H x W image.
    Image<Scalar> channel(int c) const {
        Image<Scalar> img(height, width);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                img(y, x) = color(Index(y) * width + x, c);
            }
        }
        return img;
    }
};

/// Composites one tile's pixels. Writes only pixels inside the tile.
template <typename Scalar>
void composite_tile(const TileGrid &grid, Index tile, const std::vector<Projected2D<Scalar>> &projected,
                    const RowsX<Scalar> &colors, const VecX<Scalar> &opacities, RenderOutput<Scalar> &out) {
    const int tx = static_cast<int>(tile % grid.tiles_x), ty = static_cast<int>(tile / grid.tiles_x);
    const int x0 = tx * grid.tile_size, y0 = ty * grid.tile_size;
    const int x1 = std::min(out.width, x0 + grid.tile_size), y1 = std::min(out.height, y0 + grid.tile_size);
    const Index begin = grid.tile_begin(tile), end = grid.tile_end(tile);
    const int channels = out.channels;
    VecX<Scalar> accum(channels);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            Scalar transmittance = 1;
            Scalar depth_sum = 0;
            accum.setZero();
            int contributors = 0;
            Index last = begin;
            for (Index e = begin; e < end; ++e) {
                const int g = grid.entries[static_cast<std::size_t>(e)];
                const auto &p = projected[static_cast<std::size_t>(g)];
                const auto s = evaluate_alpha(p, opacities(g), x, y);
                if (!s.active) {
                    continue;
                }
                const Scalar next_t = transmittance * (Scalar(1) - s.alpha);
                if (next_t < Scalar(raster::kMinTransmittance)) {
                    break;
                }
                const Scalar weight = s.alpha * transmittance;
                accum += weight * colors.row(g).transpose();
                depth_sum += weight * p.depth;
                transmittance = next_t;
                ++contributors;
                last = e + 1;
            }
            const Index pix = Index(y) * out.width + x;
            out.color.row(pix) = (accum + transmittance * out.background).transpose();
            out.final_T(y, x) = transmittance;
            out.alpha(y, x) = Scalar(1) - transmittance;
            out.depth_acc(y, x) = depth_sum;
            out.depth_exp(y, x) = out.alpha(y, x) > 0 ? depth_sum / out.alpha(y, x) : Scalar(0);
            out.n_contrib(y, x) = contributors;
            out.last_index(y, x) = static_cast<int>(last - begin);
        }
    }
}

template <typename Scalar>
RenderOutput<Scalar> composite_forward(const TileGrid &grid, const std::vector<Projected2D<Scalar>> &projected,
                                       const RowsX<Scalar> &colors, const VecX<Scalar> &opacities,
                                       const VecX<Scalar> &background, int width, int height, int threads = 0) {
    RenderOutput<Scalar> out;
    out.width = width;
    out.height = height;
    out.channels = static_cast<int>(colors.cols());
    if (background.size() != 0 && background.size() != colors.cols()) {
        throw ValidationError("composite_forward: background has " + std::to_string(background.size()) +
                              " channels, colors have " + std::to_string(colors.cols()));
    }
    out.background = background.size() == 0 ? VecX<Scalar>::Zero(colors.cols()) : background;
    out.color.setZero(Index(width) * height, out.channels);
    out.alpha.setZero(height, width);
    out.depth_acc.setZero(height, width);
    out.depth_exp.setZero(height, width);
    out.final_T.setOnes(height, width);
    out.n_contrib.setZero(height, width);
    out.last_index.setZero(height, width);
    parallel_for(grid.num_tiles(), worker_threads(threads),
                 [&](Index tile) { composite_tile(grid, tile, projected, colors, opacities, out); });
    return out;
}

/// Everything the backward pass needs from a forward render.
template <typename Scalar> struct RenderContext {
    Camera<Scalar> camera;
    RenderSettings<Scalar> settings;
    int sh_degree = 0;
    std::vector<ActivatedGaussian<Scalar>> gaussians;
    std::vector<Projected2D<Scalar>> projected;
    std::vector<Vec3<Scalar>> view_dirs;
    RowsX<Scalar> colors;
    VecX<Scalar> opacities;
    TileGrid grid;
};

template <typename Scalar> struct RenderResult {
    RenderOutput<Scalar> output;
    RenderContext<Scalar> context;
};

/// Unit view directions from the camera center to each mean.
template <typename Scalar>
std::vector<Vec3<Scalar>> view_directions(const GaussianCloud<Scalar> &cloud, const Camera<Scalar> &camera) {
    const Vec3<Scalar> center = camera.center();
    std::vector<Vec3<Scalar>> dirs(static_cast<std::size_t>(cloud.size()));
    for (Index n = 0; n < cloud.size(); ++n) {
        const Vec3<Scalar> d = cloud.means.row(n).transpose() - center;
        const Scalar len = d.norm();
        dirs[static_cast<std::size_t>(n)] = len > 0 ? Vec3<Scalar>(d / len) : Vec3<Scalar>(0, 0, 1);
    }
    return dirs;
}

/// Forward render. `fixed_view_dirs`, when given, replaces the per-Gaussian
/// SH view directions (used to hold colors fixed under pose perturbation).
template <typename Scalar>
RenderResult<Scalar> render(const GaussianCloud<Scalar> &cloud, const Camera<Scalar> &camera,
                            const RenderSettings<Scalar> &settings,
                            const std::vector<Vec3<Scalar>> *fixed_view_dirs = nullptr) {
    camera.validate();
    RenderResult<Scalar> result;
    auto &ctx = result.context;
    ctx.camera = camera;
    ctx.settings = settings;
    ctx.sh_degree = settings.sh_degree < 0 ? cloud.max_sh_degree() : settings.sh_degree;
    ctx.gaussians = activate(cloud);
    check_sh_degree(ctx.sh_degree, cloud.sh_bases());
    if (fixed_view_dirs && fixed_view_dirs->size() != static_cast<std::size_t>(cloud.size())) {
        throw ValidationError("render: fixed view directions do not match the cloud size");
    }
    ctx.view_dirs = fixed_view_dirs ? *fixed_view_dirs : view_directions(cloud, camera);

    const Index n = cloud.size();
    ctx.projected.resize(static_cast<std::size_t>(n));
    ctx.colors.resize(n, cloud.channels);
    ctx.opacities.resize(n);
    const int threads = worker_threads(settings.threads);
    parallel_for(n, threads, [&](Index i) {
        const auto k = static_cast<std::size_t>(i);
        const auto &g = ctx.gaussians[k];
        ctx.projected[k] = project_gaussian<Scalar>(cloud.means.row(i).transpose(), g.covariance, camera,
                                                    settings.mode, settings.blur);
        ctx.colors.row(i) = sh_eval<Scalar>(ctx.view_dirs[k], cloud.sh_block(i), ctx.sh_degree).transpose();
        ctx.opacities(i) = g.opacity;
    });
    ctx.grid = bin_and_sort(ctx.projected, camera.width, camera.height, settings.tile_size);
    result.output = composite_forward(ctx.grid, ctx.projected, ctx.colors, ctx.opacities, settings.background,
                                      camera.width, camera.height, threads);
    return result;
}

} // namespace splat
