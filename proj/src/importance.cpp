// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/importance.hpp"

#include <cmath>
#include <string>

#include "fedpipe/svd.hpp"

namespace fedpipe {

double gradient_weight_product(const Vector& params, const Vector& grads) {
    if (params.size() != grads.size()) {
        throw ShapeError("gradient_weight_product: " + std::to_string(params.size()) +
                         " parameters vs " + std::to_string(grads.size()) + " gradients");
    }
    if (params.size() == 0) {
        throw ShapeError("gradient_weight_product: empty parameter vector");
    }
    return params.cwiseProduct(grads).cwiseAbs().sum() / static_cast<double>(params.size());
}

SensitivityState update_sensitivity(const SensitivityState& state, double sensitivity,
                                    double lambda1, double lambda2) {
    if (!(lambda1 > 0.0 && lambda1 < 1.0) || !(lambda2 > 0.0 && lambda2 < 1.0)) {
        throw ParameterError("update_sensitivity: lambda1 and lambda2 must lie in (0, 1)");
    }
    SensitivityState next;
    next.smoothed = lambda1 * state.smoothed + (1.0 - lambda1) * sensitivity;
    next.uncertainty =
        lambda2 * state.uncertainty + (1.0 - lambda2) * std::abs(sensitivity - next.smoothed);
    next.round = state.round + 1;
    return next;
}

Vector flatten_adapter(const Matrix& b, const Matrix& a) {
    Vector flat(b.size() + a.size());
    Eigen::Index pos = 0;
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            flat(pos++) = b(i, j);
        }
    }
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            flat(pos++) = a(i, j);
        }
    }
    return flat;
}

ImportanceScore score(const LoraAdapter& adapter, SensitivityState& state,
                      const Matrix& grad_b, const Matrix& grad_a, double lambda1,
                      double lambda2) {
    if (grad_b.rows() != adapter.B.rows() || grad_b.cols() != adapter.B.cols() ||
        grad_a.rows() != adapter.A.rows() || grad_a.cols() != adapter.A.cols()) {
        throw ShapeError("score: gradient shapes do not match the adapter factors");
    }
    Vector sv = singular_values_of_product(adapter.B, adapter.A);
    const double singular_mean = sv.sum() / static_cast<double>(sv.size());

    const double sensitivity = gradient_weight_product(
        flatten_adapter(adapter.B, adapter.A), flatten_adapter(grad_b, grad_a));
    state = update_sensitivity(state, sensitivity, lambda1, lambda2);

    ImportanceScore result;
    result.singular_mean = singular_mean;
    result.phi = state.smoothed * state.uncertainty;
    result.value = result.singular_mean + result.phi;
    return result;
}

}  // namespace fedpipe
