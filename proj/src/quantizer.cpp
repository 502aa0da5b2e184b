// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace fedpipe {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace {

// Acklam's rational approximation of the standard normal quantile.
double quantile_estimate(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw ParameterError("normal_quantile: p must lie in (0, 1)");
    }
    double x = quantile_estimate(p);
    // One Halley step against the exact CDF brings the estimate to machine
    // precision.
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
    return x;
}

NfCodebook build_codebook(int k) {
    if (k != 1 && k != 2 && k != 3 && k != 4 && k != 8) {
        throw ParameterError("build_codebook: unsupported bit width " + std::to_string(k));
    }
    const int n = 1 << k;
    const double denom = static_cast<double>(n + 1);
    const double eps = 1.0 / (2.0 * denom);
    auto boundary = [&](int j) {
        return std::clamp(static_cast<double>(j) / denom, eps, 1.0 - eps);
    };

    std::vector<double> raw(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        raw[static_cast<std::size_t>(i - 1)] =
            0.5 * (normal_quantile(boundary(i)) + normal_quantile(boundary(i + 1)));
    }

    NfCodebook book;
    book.bits = k;
    book.codes.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // code_i = -code_{n-1-i} holds exactly in IEEE arithmetic.
        book.codes[static_cast<std::size_t>(i)] =
            0.5 * (raw[static_cast<std::size_t>(i)] - raw[static_cast<std::size_t>(n - 1 - i)]);
    }
    const double top = book.codes.back();
    for (double& code : book.codes) {
        code /= top;
    }
    return book;
}

namespace {

std::size_t nearest_code_index(const std::vector<double>& codes, double value) {
    auto hi = std::lower_bound(codes.begin(), codes.end(), value);
    if (hi == codes.begin()) {
        return 0;
    }
    if (hi == codes.end()) {
        return codes.size() - 1;
    }
    auto lo = hi - 1;
    // Ties go to the lower index.
    if (value - *lo <= *hi - value) {
        return static_cast<std::size_t>(lo - codes.begin());
    }
    return static_cast<std::size_t>(hi - codes.begin());
}

}  // namespace

QuantizedTensor quantize(const Matrix& tensor, const NfCodebook& codebook, int block_size) {
    if (block_size < 1) {
        throw ParameterError("quantize: block_size must be >= 1");
    }
    if (!tensor.allFinite()) {
        throw ParameterError("quantize: input has non-finite entries");
    }
    const auto total = static_cast<std::size_t>(tensor.size());
    const auto bs = static_cast<std::size_t>(block_size);
    const std::size_t n_blocks = total == 0 ? 0 : (total + bs - 1) / bs;
    const std::size_t zero_index = nearest_code_index(codebook.codes, 0.0);

    QuantizedTensor qt;
    qt.rows = tensor.rows();
    qt.cols = tensor.cols();
    qt.block_size = block_size;
    qt.scales.resize(n_blocks);
    qt.indices.resize(total);

    const double* data = tensor.data();  // row-major contiguous
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
        const std::size_t begin = blk * bs;
        const std::size_t end = std::min(begin + bs, total);
        double absmax = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            absmax = std::max(absmax, std::abs(data[i]));
        }
        if (absmax == 0.0) {
            qt.scales[blk] = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                qt.indices[i] = static_cast<std::uint16_t>(zero_index);
            }
            continue;
        }
        qt.scales[blk] = absmax;
        for (std::size_t i = begin; i < end; ++i) {
            qt.indices[i] =
                static_cast<std::uint16_t>(nearest_code_index(codebook.codes, data[i] / absmax));
        }
    }
    return qt;
}

Matrix dequantize(const QuantizedTensor& qt, const NfCodebook& codebook) {
    const auto total = static_cast<std::size_t>(qt.rows) * static_cast<std::size_t>(qt.cols);
    if (qt.indices.size() != total || qt.block_size < 1) {
        throw CorruptionError("dequantize: index count does not match the tensor shape");
    }
    Matrix out(qt.rows, qt.cols);
    double* data = out.data();
    const auto bs = static_cast<std::size_t>(qt.block_size);
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t blk = i / bs;
        if (blk >= qt.scales.size() || qt.indices[i] >= codebook.codes.size()) {
            throw CorruptionError("dequantize: code index or block scale out of range");
        }
        data[i] = qt.scales[blk] * codebook.codes[qt.indices[i]];
    }
    return out;
}

std::uint64_t footprint_bytes(std::uint64_t param_count, int bits, int block_size) {
    if (param_count < 1 || bits < 1 || block_size < 1) {
        throw ParameterError("footprint_bytes: all inputs must be >= 1");
    }
    const std::uint64_t payload =
        (param_count * static_cast<std::uint64_t>(bits) + 7) / 8;
    const std::uint64_t blocks =
        (param_count + static_cast<std::uint64_t>(block_size) - 1) /
        static_cast<std::uint64_t>(block_size);
    return payload + blocks * 4;
}

double max_adjacent_gap(const NfCodebook& codebook) {
    double gap = 0.0;
    for (std::size_t i = 1; i < codebook.codes.size(); ++i) {
        gap = std::max(gap, codebook.codes[i] - codebook.codes[i - 1]);
    }
    return gap;
}

double float_round_trip(double x) { return static_cast<double>(static_cast<float>(x)); }

double half_round_trip(double x) {
    const float f = static_cast<float>(x);
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    const std::uint32_t sign = bits >> 31;
    const std::int32_t exponent = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127;
    const std::uint32_t mantissa = bits & 0x7fffff;

    std::uint16_t half;
    if (exponent == 128) {  // inf or nan
        half = static_cast<std::uint16_t>((sign << 15) | 0x7c00 | (mantissa ? 0x200 : 0));
    } else if (exponent > 15) {  // overflow: clamp to largest finite half
        half = static_cast<std::uint16_t>((sign << 15) | 0x7bff);
    } else if (exponent >= -14) {  // normal range
        std::uint32_t m = mantissa >> 13;
        const std::uint32_t rest = mantissa & 0x1fff;
        if (rest > 0x1000 || (rest == 0x1000 && (m & 1))) {
            ++m;  // round to nearest even; carry may bump the exponent
        }
        std::uint32_t packed =
            (static_cast<std::uint32_t>(exponent + 15) << 10) + m;
        if (packed >= 0x7c00) {
            packed = 0x7bff;  // rounding carried past the largest finite half
        }
        half = static_cast<std::uint16_t>((sign << 15) | packed);
    } else if (exponent >= -25) {  // subnormal half
        // Target mantissa is full * 2^(exponent+1) with full = 1.m * 2^23.
        const std::uint32_t full = mantissa | 0x800000;
        const int sh = -exponent - 1;  // 14..24
        std::uint32_t m = full >> sh;
        const std::uint32_t rest = full & ((1u << sh) - 1);
        const std::uint32_t halfway = 1u << (sh - 1);
        if (rest > halfway || (rest == halfway && (m & 1))) {
            ++m;  // may round up into the smallest normal, which packs correctly
        }
        half = static_cast<std::uint16_t>((sign << 15) | m);
    } else {  // underflow to signed zero
        half = static_cast<std::uint16_t>(sign << 15);
    }

    // Expand back to double.
    const std::uint32_t h_sign = (half >> 15) & 1;
    const std::uint32_t h_exp = (half >> 10) & 0x1f;
    const std::uint32_t h_man = half & 0x3ff;
    double value;
    if (h_exp == 0) {
        value = std::ldexp(static_cast<double>(h_man), -24);
    } else if (h_exp == 31) {
        value = h_man ? std::numeric_limits<double>::quiet_NaN()
                      : std::numeric_limits<double>::infinity();
    } else {
        value = std::ldexp(static_cast<double>(h_man | 0x400), static_cast<int>(h_exp) - 15 - 10);
    }
    return h_sign ? -value : value;
}

QuantizerSet::QuantizerSet(int block_size)
    : block_size_(block_size), nf4_(build_codebook(4)), nf8_(build_codebook(8)) {}

Matrix QuantizerSet::round_trip(const Matrix& m, int bits) const {
    switch (bits) {
    case 32:
        return m.unaryExpr([](double x) { return float_round_trip(x); });
    case 16:
        return m.unaryExpr([](double x) { return half_round_trip(x); });
    case 8:
        return dequantize(quantize(m, nf8_, block_size_), nf8_);
    case 4:
        return dequantize(quantize(m, nf4_, block_size_), nf4_);
    default:
        throw ParameterError("round_trip: unsupported bit width " + std::to_string(bits));
    }
}

}  // namespace fedpipe
