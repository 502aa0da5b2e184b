// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "fedpipe/matrix.hpp"

namespace fedpipe {

/// All singular values of the product B*A (shapes d_i x r and r x d_o),
/// sorted descending and zero-padded to length min(d_i, d_o). Works on the
/// r x r core after QR-reducing both factors, so the d_i x d_o product is
/// never materialized for the decomposition.
Vector singular_values_of_product(const Matrix& b, const Matrix& a);

}  // namespace fedpipe
