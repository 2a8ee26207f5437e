// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "splat/strategy.hpp"

namespace splat {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Moments for one parameter group, row-aligned with the parameters.
struct AdamMoments {
    RowsX<double> m, v;
    long step = 0;

    void ensure_shape(Index rows, Index cols) {
        if (m.rows() != rows || m.cols() != cols) {
            m.setZero(rows, cols);
            v.setZero(rows, cols);
        }
    }
    void remap(const RowMap &map) {
        m = remap_rows(m, map);
        v = remap_rows(v, map);
    }
    void clear() {
        m.setZero();
        v.setZero();
    }
};

/// Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps); the caller applies
/// params -= lr * direction. Updates the moments.
template <typename Derived>
RowsX<double> adam_direction(const Eigen::MatrixBase<Derived> &grad, AdamMoments &mom, const AdamConfig &cfg = {}) {
    mom.ensure_shape(grad.rows(), grad.cols());
    ++mom.step;
    mom.m = cfg.beta1 * mom.m + (1 - cfg.beta1) * grad;
    mom.v = cfg.beta2 * mom.v + (1 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(mom.step));
    const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(mom.step));
    return ((mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + cfg.eps)).matrix();
}

/// params -= lr * adam_direction(grad).
template <typename P, typename G>
void adam_step(Eigen::MatrixBase<P> &params, const Eigen::MatrixBase<G> &grad, AdamMoments &mom, double lr,
               const AdamConfig &cfg = {}) {
    if (params.rows() != grad.rows() || params.cols() != grad.cols()) {
        throw ValidationError("adam_step: parameter and gradient shapes differ");
    }
    const RowsX<double> dir = adam_direction(grad, mom, cfg);
    params.derived() -= lr * dir;
}

} // namespace splat
