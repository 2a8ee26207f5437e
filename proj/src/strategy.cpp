// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace splat {

RowMap RowMap::identity(Index n) {
    RowMap m;
    m.source.resize(static_cast<std::size_t>(n));
    std::iota(m.source.begin(), m.source.end(), Index(0));
    return m;
}

bool RowMap::is_identity() const {
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (source[i] != static_cast<Index>(i)) {
            return false;
        }
    }
    return true;
}

void StrategyState::resize(Index n) {
    grad_accum.setZero(n);
    count.setZero(n);
    max_radius.setZero(n);
}

void StrategyState::reset_accumulators() {
    grad_accum.setZero();
    count.setZero();
    max_radius.setZero();
}

void StrategyState::remap(const RowMap &map) {
    grad_accum = remap_rows(grad_accum, map);
    count = remap_rows(count, map);
    max_radius = remap_rows(max_radius, map);
}

void StrategyState::check(Index n, const char *where) const {
    if (size() != n || count.size() != n || max_radius.size() != n) {
        throw StateDesyncError(std::string(where) + ": strategy state has " + std::to_string(size()) +
                               " rows, cloud has " + std::to_string(n));
    }
}

void accumulate(StrategyState &state, const std::vector<ViewGradients> &views, GradMode mode) {
    const Index n = state.size();
    Rows<double, 2> sum = Rows<double, 2>::Zero(n, 2);
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (const auto &v : views) {
        const auto &g = mode == GradMode::Signed ? v.mean2d : v.mean2d_abs;
        if (g.rows() != n || static_cast<Index>(v.visible.size()) != n || v.radius.size() != n) {
            throw StateDesyncError("accumulate: view gradients have " + std::to_string(g.rows()) +
                                   " rows, state has " + std::to_string(n));
        }
        const double sx = 0.5 * v.width, sy = 0.5 * v.height;
        const double extent = std::max(1, std::max(v.width, v.height));
        for (Index i = 0; i < n; ++i) {
            if (!v.visible[static_cast<std::size_t>(i)]) {
                continue;
            }
            seen[static_cast<std::size_t>(i)] = true;
            const double gx = g(i, 0) * sx, gy = g(i, 1) * sy;
            sum(i, 0) += mode == GradMode::Signed ? gx : std::abs(gx);
            sum(i, 1) += mode == GradMode::Signed ? gy : std::abs(gy);
            state.max_radius(i) = std::max(state.max_radius(i), v.radius(i) / extent);
        }
    }
    for (Index i = 0; i < n; ++i) {
        if (seen[static_cast<std::size_t>(i)]) {
            state.grad_accum(i) += sum.row(i).norm();
            state.count(i) += 1;
        }
    }
}

namespace {

double max_scale(const GaussianCloud<double> &cloud, Index i) { return std::exp(cloud.raw_scales.row(i).maxCoeff()); }

// Keeps rows where keep[i] is true, composing the row map.
void filter_rows(GaussianCloud<double> &cloud, StrategyState &state, RowMap &rows, const std::vector<bool> &keep) {
    std::vector<Index> idx;
    RowMap next;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) {
            idx.push_back(static_cast<Index>(i));
            next.source.push_back(rows.source[i]);
        }
    }
    cloud = cloud.select(idx);
    RowMap local;
    local.source = idx;
    state.remap(local);
    rows = std::move(next);
}

} // namespace

void reset_opacities(GaussianCloud<double> &cloud, double value) {
    const double cap = logit(value);
    for (Index i = 0; i < cloud.size(); ++i) {
        cloud.raw_opacities(i) = std::min(cloud.raw_opacities(i), cap);
    }
}

AdcResult adc_refine(GaussianCloud<double> &cloud, StrategyState &state, const AdcConfig &config, double scene_extent,
                     std::mt19937_64 &rng, bool prune_large) {
    state.check(cloud.size(), "adc_refine");
    if (!(scene_extent > 0)) {
        throw ConfigError("adc_refine: scene extent must be positive");
    }
    AdcResult res;
    res.report.refined = true;
    const Index n = cloud.size();
    std::vector<Index> clone, split;
    std::vector<bool> keep(static_cast<std::size_t>(n), true);
    for (Index i = 0; i < n; ++i) {
        const double mean_grad = state.grad_accum(i) / std::max(1, state.count(i));
        if (!(mean_grad > config.grow_grad2d)) {
            continue;
        }
        if (max_scale(cloud, i) > config.grow_scale3d * scene_extent) {
            split.push_back(i);
            keep[static_cast<std::size_t>(i)] = false;
        } else {
            clone.push_back(i);
        }
    }

    // Surviving originals, then clones, then split children; new rows start fresh.
    std::vector<Index> order;
    for (Index i = 0; i < n; ++i) {
        if (keep[static_cast<std::size_t>(i)]) {
            order.push_back(i);
            res.rows.source.push_back(i);
        }
    }
    for (Index i : clone) {
        order.push_back(i);
        res.rows.source.push_back(-1);
    }
    const Index children_begin = static_cast<Index>(order.size());
    for (Index i : split) {
        for (int c = 0; c < config.split_children; ++c) {
            order.push_back(i);
            res.rows.source.push_back(-1);
        }
    }
    GaussianCloud<double> next = cloud.select(order);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double log_div = std::log(config.split_scale_divisor);
    for (Index r = children_begin; r < next.size(); ++r) {
        const Index parent = order[static_cast<std::size_t>(r)];
        const Vec3<double> s = cloud.raw_scales.row(parent).array().exp().transpose();
        const Mat3<double> rot = quat_to_rotmat<double>(cloud.quats.row(parent).transpose());
        const Vec3<double> eps(normal(rng), normal(rng), normal(rng));
        next.means.row(r) = (cloud.means.row(parent).transpose() + rot * s.cwiseProduct(eps)).transpose();
        next.raw_scales.row(r).array() -= log_div;
    }
    res.report.cloned = static_cast<Index>(clone.size());
    res.report.split = static_cast<Index>(split.size());
    cloud = std::move(next);
    {
        RowMap grow;
        grow.source = order;
        for (Index r = static_cast<Index>(n - split.size()); r < static_cast<Index>(order.size()); ++r) {
            grow.source[static_cast<std::size_t>(r)] = -1;
        }
        state.remap(grow);
    }

    std::vector<bool> alive(static_cast<std::size_t>(cloud.size()), true);
    for (Index i = 0; i < cloud.size(); ++i) {
        bool prune = sigmoid(cloud.raw_opacities(i)) < config.prune_opa;
        if (prune_large) {
            prune = prune || max_scale(cloud, i) > config.prune_scale3d * scene_extent;
        }
        if (prune) {
            alive[static_cast<std::size_t>(i)] = false;
            ++res.report.pruned;
        }
    }
    if (res.report.pruned == cloud.size()) {
        throw DegenerateInputError("adc_refine: pruning would remove every Gaussian");
    }
    if (res.report.pruned > 0) {
        filter_rows(cloud, state, res.rows, alive);
    }
    state.reset_accumulators();
    return res;
}

AdcResult adc_step(GaussianCloud<double> &cloud, StrategyState &state, int step, const AdcConfig &config,
                   double scene_extent, std::mt19937_64 *rng) {
    state.check(cloud.size(), "adc_step");
    state.step = step;
    AdcResult res;
    res.rows = RowMap::identity(cloud.size());
    if (step >= config.refine_stop) {
        return res;
    }
    if (step > config.refine_start && config.refine_every > 0 && step % config.refine_every == 0) {
        if (!rng) {
            throw ConfigError("adc_step: a random generator is required to split");
        }
        res = adc_refine(cloud, state, config, scene_extent, *rng, step > config.reset_every);
    }
    if (config.reset_every > 0 && step > 0 && step % config.reset_every == 0) {
        reset_opacities(cloud, config.reset_opa);
        res.report.reset = true;
        res.opacities_reset = true;
    }
    return res;
}

void mcmc_noise(GaussianCloud<double> &cloud, double lr, const McmcConfig &config, std::mt19937_64 &rng) {
    if (config.noise_lr == 0.0) {
        return;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < cloud.size(); ++i) {
        const Vec3<double> eps(normal(rng), normal(rng), normal(rng));
        double gate = 1.0;
        if (config.opacity_gating) {
            gate = sigmoid(-config.gate_k * (sigmoid(cloud.raw_opacities(i)) - config.gate_t0));
        }
        const auto g = activate_one(cloud, i);
        const Vec3<double> step = g.rotation * g.scale.cwiseProduct(eps);
        cloud.means.row(i) += (config.noise_lr * lr * gate) * step.transpose();
    }
}

std::pair<double, double> relocation_correction(double opacity, int copies) {
    if (copies < 1) {
        throw ValidationError("relocation_correction: copies must be positive");
    }
    const double new_o = 1.0 - std::pow(1.0 - opacity, 1.0 / copies);
    double denom = 0;
    for (int i = 1; i <= copies; ++i) {
        double binom = 1; // C(i-1, k)
        for (int k = 0; k < i; ++k) {
            denom += binom * (k % 2 ? -1.0 : 1.0) / std::sqrt(k + 1.0) * std::pow(new_o, k + 1);
            binom = binom * (i - 1 - k) / (k + 1);
        }
    }
    return {new_o, opacity / denom};
}

namespace {

// Rewrites each sampled row for the number of copies it will end up with.
void apply_relocation(GaussianCloud<double> &cloud, const std::vector<Index> &sampled, double min_opacity) {
    std::vector<int> copies(static_cast<std::size_t>(cloud.size()), 0);
    for (Index s : sampled) {
        ++copies[static_cast<std::size_t>(s)];
    }
    for (Index i = 0; i < cloud.size(); ++i) {
        const int c = copies[static_cast<std::size_t>(i)];
        if (c == 0) {
            continue;
        }
        const auto [o, f] = relocation_correction(sigmoid(cloud.raw_opacities(i)), c + 1);
        cloud.raw_opacities(i) = logit(std::clamp(o, min_opacity, 1.0 - 1e-7));
        cloud.raw_scales.row(i).array() += std::log(f);
    }
}

std::vector<Index> sample_by_opacity(const GaussianCloud<double> &cloud, const std::vector<Index> &pool, Index count,
                                     std::mt19937_64 &rng) {
    std::vector<double> w;
    for (Index i : pool) {
        w.push_back(sigmoid(cloud.raw_opacities(i)));
    }
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    std::vector<Index> out;
    for (Index k = 0; k < count; ++k) {
        out.push_back(pool[pick(rng)]);
    }
    return out;
}

} // namespace

McmcResult mcmc_refine(GaussianCloud<double> &cloud, StrategyState &state, const McmcConfig &config,
                       std::mt19937_64 &rng) {
    state.check(cloud.size(), "mcmc_refine");
    McmcResult res;
    res.rows = RowMap::identity(cloud.size());
    const Index n = cloud.size();

    std::vector<Index> dead, alive;
    for (Index i = 0; i < n; ++i) {
        (sigmoid(cloud.raw_opacities(i)) <= config.min_opacity ? dead : alive).push_back(i);
    }
    if (!dead.empty() && !alive.empty()) {
        const auto sampled = sample_by_opacity(cloud, alive, static_cast<Index>(dead.size()), rng);
        apply_relocation(cloud, sampled, config.min_opacity);
        for (std::size_t k = 0; k < dead.size(); ++k) {
            const Index d = dead[k], s = sampled[k];
            cloud.means.row(d) = cloud.means.row(s);
            cloud.raw_scales.row(d) = cloud.raw_scales.row(s);
            cloud.quats.row(d) = cloud.quats.row(s);
            cloud.raw_opacities(d) = cloud.raw_opacities(s);
            cloud.sh_coeffs.row(d) = cloud.sh_coeffs.row(s);
            res.rows.source[static_cast<std::size_t>(d)] = -1;
            res.rows.source[static_cast<std::size_t>(s)] = -1;
        }
        res.report.relocated = static_cast<Index>(dead.size());
    }

    const Index target = std::min<Index>(config.cap_max, static_cast<Index>(std::ceil(config.grow_factor * static_cast<double>(n))));
    const Index add = std::max<Index>(0, target - n);
    if (add > 0) {
        std::vector<Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Index(0));
        const auto sampled = sample_by_opacity(cloud, all, add, rng);
        apply_relocation(cloud, sampled, config.min_opacity);
        cloud.append(cloud.select(sampled));
        for (Index s : sampled) {
            res.rows.source[static_cast<std::size_t>(s)] = -1;
        }
        res.rows.source.resize(static_cast<std::size_t>(n + add), -1);
        res.report.added = add;
    }
    RowMap grow = RowMap::identity(n);
    grow.source.resize(static_cast<std::size_t>(cloud.size()), -1);
    state.remap(grow);
    state.reset_accumulators();
    return res;
}

McmcResult mcmc_step(GaussianCloud<double> &cloud, StrategyState &state, int step, double lr,
                     const McmcConfig &config, std::mt19937_64 *rng) {
    if (!rng) {
        throw ConfigError("mcmc_step: a random generator is required");
    }
    state.check(cloud.size(), "mcmc_step");
    state.step = step;
    McmcResult res;
    res.rows = RowMap::identity(cloud.size());
    if (step < config.refine_stop && step > config.refine_start && config.refine_every > 0 &&
        step % config.refine_every == 0) {
        res = mcmc_refine(cloud, state, config, *rng);
    }
    mcmc_noise(cloud, lr, config, *rng);
    return res;
}

} // namespace splat
