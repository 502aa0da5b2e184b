// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "fedpipe/matrix.hpp"
#include "fedpipe/model.hpp"

namespace fedpipe {

/// Exponential-moving-average sensitivity tracker for one (client, layer,
/// weight-slot). Starts at zero.
struct SensitivityState {
    double smoothed = 0.0;     // I-bar
    double uncertainty = 0.0;  // U-bar
    int round = 0;             // round of last update
};

struct ImportanceScore {
    double value = 0.0;          // singular_mean + phi, exactly
    double singular_mean = 0.0;  // mean of all min(d_i,d_o) singular values of B*A
    double phi = 0.0;            // I-bar * U-bar after the update
};

/// Mean magnitude of the elementwise weight-gradient product,
/// (1/n) * sum_j |w_j * g_j|.
double gradient_weight_product(const Vector& params, const Vector& grads);

/// One smoothing step: I-bar <- l1*I-bar + (1-l1)*I_t, then
/// U-bar <- l2*U-bar + (1-l2)*|I_t - I-bar_new| (the uncertainty term sees
/// the just-updated mean). Requires 0 < l1, l2 < 1.
SensitivityState update_sensitivity(const SensitivityState& state, double sensitivity,
                                    double lambda1, double lambda2);

/// Concatenated entries of B then A, row-major.
Vector flatten_adapter(const Matrix& b, const Matrix& a);

/// Importance of one adapter: mean singular value of B*A plus the smoothed
/// sensitivity-uncertainty product. Advances `state` by one round as a side
/// effect (gradients of B and A feed the sensitivity update).
ImportanceScore score(const LoraAdapter& adapter, SensitivityState& state,
                      const Matrix& grad_b, const Matrix& grad_a, double lambda1,
                      double lambda2);

}  // namespace fedpipe
