// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Densification and pruning controllers run between optimizer steps: ADC
// (clone, split, prune, opacity reset) with signed or absolute gradient
// accumulation, and the MCMC variant (Langevin noise plus relocation).

#pragma once

#include <random>
#include <vector>

#include "splat/scene.hpp"

namespace splat {

class StateDesyncError : public Error {
  public:
    using Error::Error;
};

enum class GradMode { Signed, Absolute };

/// Row provenance after a structural edit: source[i] is the old row that new
/// row i continues, or -1 for a row whose optimizer history starts fresh.
struct RowMap {
    std::vector<Index> source;

    static RowMap identity(Index n);
    Index size() const { return static_cast<Index>(source.size()); }
    bool is_identity() const;
};

/// Gathers rows of `m` by `map`; fresh rows are zero.
template <typename Derived> auto remap_rows(const Eigen::MatrixBase<Derived> &m, const RowMap &map) {
    using Plain = typename Derived::PlainObject;
    Plain out = Plain::Zero(map.size(), m.cols());
    for (Index i = 0; i < map.size(); ++i) {
        const Index s = map.source[static_cast<std::size_t>(i)];
        if (s >= 0) {
            out.row(i) = m.row(s);
        }
    }
    return out;
}

struct StrategyState {
    VecX<double> grad_accum;   // sum over steps of per-step view-space gradient norms
    Eigen::VectorXi count;     // steps in which the Gaussian was visible
    VecX<double> max_radius;   // largest 2D radius seen, as a fraction of max(width, height)
    int step = 0;

    explicit StrategyState(Index n = 0) { resize(n); }
    Index size() const { return grad_accum.size(); }
    void resize(Index n);
    void reset_accumulators();
    void remap(const RowMap &map);
    void check(Index n, const char *where) const;
};

/// One view's contribution: dL/dmean2d in pixels (signed sum over pixels and
/// absolute sum), visibility and pixel radius per Gaussian.
struct ViewGradients {
    Rows<double, 2> mean2d;
    Rows<double, 2> mean2d_abs;
    std::vector<bool> visible;
    VecX<double> radius;
    int width = 0, height = 0;
};

/// Adds ||sum_v g_v|| (signed) or ||sum_v |g_v||| (absolute) to each visible
/// Gaussian, with pixel gradients scaled to half-extent units (x W/2, y H/2).
/// Counts go up once per call for Gaussians visible in any of the views.
void accumulate(StrategyState &state, const std::vector<ViewGradients> &views, GradMode mode);

struct AdcConfig {
    double grow_grad2d = 2e-4;
    double grow_scale3d = 0.01; // times scene extent
    double prune_opa = 0.005;
    double prune_scale3d = 0.1; // times scene extent, applied after the first reset
    double reset_opa = 0.01;
    int refine_start = 500;
    int refine_stop = 15000;
    int refine_every = 100;
    int reset_every = 3000;
    int split_children = 2;
    double split_scale_divisor = 1.6;
    GradMode mode = GradMode::Signed;
};

struct AdcReport {
    Index cloned = 0, split = 0, pruned = 0;
    bool reset = false;
    bool refined = false;
};

/// Applies one ADC refinement to cloud and state on the given step. Returns the row map
/// for optimizer-state surgery alongside the counts.
struct AdcResult {
    AdcReport report;
    RowMap rows;
    /// Rows whose raw opacity was overwritten by a reset (their moments should be cleared).
    bool opacities_reset = false;
};

/// Grow (clone/split) then prune. Never touches the schedule.
AdcResult adc_refine(GaussianCloud<double> &cloud, StrategyState &state, const AdcConfig &config, double scene_extent,
                     std::mt19937_64 &rng, bool prune_large);

/// Caps every activated opacity at `value`.
void reset_opacities(GaussianCloud<double> &cloud, double value);

/// Scheduled ADC: refines on refine_every steps inside [refine_start, refine_stop) and
/// resets opacities on reset_every steps.
AdcResult adc_step(GaussianCloud<double> &cloud, StrategyState &state, int step, const AdcConfig &config,
                   double scene_extent, std::mt19937_64 *rng);

struct McmcConfig {
    Index cap_max = 1000000;
    double noise_lr = 5e5;
    double min_opacity = 0.005;
    double gate_k = 100;
    double gate_t0 = 0.005;
    bool opacity_gating = true;
    double grow_factor = 1.05;
    int refine_start = 500;
    int refine_stop = 25000;
    int refine_every = 100;
};

/// mean += noise_lr * lr * gate(o) * R S eps, eps ~ N(0, I), so the displacement
/// has covariance (noise_lr * lr * gate)^2 * Sigma. Only means move.
void mcmc_noise(GaussianCloud<double> &cloud, double lr, const McmcConfig &config, std::mt19937_64 &rng);

struct McmcReport {
    Index relocated = 0, added = 0;
};

struct McmcResult {
    McmcReport report;
    RowMap rows;
};

/// Moves dead Gaussians (opacity <= min_opacity) onto live ones drawn in
/// proportion to opacity, then grows toward the cap.
McmcResult mcmc_refine(GaussianCloud<double> &cloud, StrategyState &state, const McmcConfig &config,
                       std::mt19937_64 &rng);

/// Noise step, plus a refinement on scheduled steps. `rng` must be non-null.
McmcResult mcmc_step(GaussianCloud<double> &cloud, StrategyState &state, int step, double lr,
                     const McmcConfig &config, std::mt19937_64 *rng);

/// Opacity and scale of each of `copies` Gaussians replacing one, chosen so the
/// copies composited together match the original's opacity and footprint.
std::pair<double, double> relocation_correction(double opacity, int copies);

} // namespace splat
