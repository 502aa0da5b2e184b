// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <vector>

#include "fedpipe/matrix.hpp"

namespace fedpipe {

/// k-bit NormalFloat code values: 2^k reals in [-1, 1], strictly increasing,
/// antisymmetric, max |code| = 1. Immutable and shareable.
struct NfCodebook {
    int bits = 0;
    std::vector<double> codes;
};

/// Standard normal quantile function (inverse CDF), accurate to full double
/// precision via a rational approximation plus one Halley refinement.
double normal_quantile(double p);

/// Standard normal CDF.
double normal_cdf(double x);

/// Codebook from quantile midpoints: raw_i = (Q(p_i) + Q(p_{i+1})) / 2 with
/// p_j = clamp(j / (2^k + 1), eps, 1 - eps), eps = 1 / (2 (2^k + 1)), then
/// exact symmetrization and normalization by the largest magnitude.
/// Supported k: 1 (tests), 2, 3, 4, 8.
NfCodebook build_codebook(int k);

/// Block-quantized tensor: per block of `block_size` consecutive row-major
/// elements, the absmax scale and one code index per element. Scales are kept
/// at working precision; footprint_bytes prices them at 4 bytes each, the
/// transfer format.
struct QuantizedTensor {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    int block_size = 0;
    std::vector<double> scales;          // one per block; 0 for all-zero blocks
    std::vector<std::uint16_t> indices;  // one per element
};

/// Absmax block quantization: scale = max |x| over the block, each element
/// mapped to the nearest code of x/scale (ties toward the lower index).
QuantizedTensor quantize(const Matrix& tensor, const NfCodebook& codebook, int block_size);

/// element = scale * codes[index], original shape restored.
Matrix dequantize(const QuantizedTensor& qt, const NfCodebook& codebook);

/// ceil(param_count * bits / 8) payload plus one 4-byte scale per block.
std::uint64_t footprint_bytes(std::uint64_t param_count, int bits, int block_size);

/// Largest gap between adjacent codes; scale * gap / 2 bounds the per-element
/// round-trip error.
double max_adjacent_gap(const NfCodebook& codebook);

/// Round-trips one value through IEEE binary32.
double float_round_trip(double x);

/// Round-trips one value through IEEE binary16 (round to nearest even,
/// overflow to infinity is clamped to the largest finite half).
double half_round_trip(double x);

/// The storage ladder used for client backbones: 32/16 bits round through
/// IEEE float/half, 8/4 bits through NormalFloat block quantization.
class QuantizerSet {
public:
    explicit QuantizerSet(int block_size);

    Matrix round_trip(const Matrix& m, int bits) const;
    int block_size() const { return block_size_; }
    const NfCodebook& nf4() const { return nf4_; }
    const NfCodebook& nf8() const { return nf8_; }

private:
    int block_size_;
    NfCodebook nf4_;
    NfCodebook nf8_;
};

}  // namespace fedpipe
