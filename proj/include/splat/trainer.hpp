// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: render, photometric loss, backward, densification hooks
// and per-group Adam updates, with optional camera pose refinement.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "splat/optimizer.hpp"
#include "splat/projection.hpp"
#include "splat/strategy.hpp"

namespace splat {

enum class StrategyKind { None, Adc, Mcmc };

struct LearningRates {
    double means = 1.6e-4; // times scene extent
    double means_final_factor = 0.01;
    double scales = 5e-3;
    double quats = 1e-3;
    double opacities = 5e-2;
    double sh = 2.5e-3;
    double sh_rest_factor = 1.0 / 20; // higher SH bands
    double pose = 1e-4;
};

/// Which parameter groups receive updates.
struct TrainMask {
    bool means = true, scales = true, quats = true, opacities = true, sh = true;
};

struct TrainConfig {
    int iterations = 2000;
    LearningRates lr;
    TrainMask optimize;
    double lambda_ssim = 0.2;
    StrategyKind strategy = StrategyKind::Adc;
    bool absgrad = false;
    AdcConfig adc;
    McmcConfig mcmc;
    bool pose_opt = false;
    RasterMode mode = RasterMode::Classic;
    double blur = 0.3;
    int sh_degree = 3; // capped by the cloud
    int sh_warmup_every = 1000;
    int batch_size = 1;
    std::uint64_t seed = 0;
    int threads = 0;
    std::vector<double> background; // empty = black
    AdamConfig adam;

    void validate() const;
};

struct TrainView {
    Camera<double> camera;
    RowsX<double> target; // (H * W) x C
};

struct MetricRow {
    int step = 0;
    double loss = 0, psnr = 0, ssim = 0;
    Index num_gaussians = 0;
    double wall_ms = 0;
};

struct TrainResult {
    GaussianCloud<double> cloud;
    std::vector<Camera<double>> cameras;    // refined when pose_opt is on
    std::vector<Vec6<double>> perturbations; // local (axis-angle, translation) offset from the initial pose
    std::vector<MetricRow> log;
    double scene_extent = 1;
};

/// Snapshot passed to the abort handler and carried by the thrown error.
class TrainingAborted : public NumericalError {
  public:
    TrainingAborted(const std::string &what, int step) : NumericalError(what), step(step) {}
    int step;
};

/// Radius of the camera centers around their mean (x 1.1), falling back to the
/// distance from the single camera to the cloud centroid.
double scene_extent(const std::vector<Camera<double>> &cameras, const GaussianCloud<double> &cloud);

/// One gradient step on the right-multiplied local perturbation:
/// R' = polar(R exp([-lr w]x)), t' = t - lr R d.
Camera<double> apply_pose_step(const Camera<double> &camera, const Vec6<double> &direction, double lr);

/// Local (axis-angle, translation) offset of `current` from `initial`.
Vec6<double> pose_offset(const Camera<double> &initial, const Camera<double> &current);

using StepCallback = std::function<void(const MetricRow &)>;

TrainResult train(const GaussianCloud<double> &init, const std::vector<TrainView> &views, const TrainConfig &config,
                  const StepCallback &on_step = {});

/// CSV with header step,loss,psnr,ssim,num_gaussians,wall_ms. Without wall time
/// the log is a deterministic function of the inputs.
std::string metric_csv_header(bool with_wall_time = true);
std::string metric_csv_row(const MetricRow &row, bool with_wall_time = true);
void write_metric_log(std::ostream &os, const std::vector<MetricRow> &log, bool with_wall_time = true);

} // namespace splat
