// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "fedpipe/errors.hpp"

namespace fedpipe {

// Row-major so that flattening (quantizer blocks, parameter vectors) walks
// elements in row order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) {
        throw ParameterError(std::string(what) + ": non-finite entries");
    }
}

/// Deterministic random stream. One instance per logical stream; never share
/// an instance across concurrent tasks.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double gaussian() { return normal_(gen_); }
    double uniform() { return uniform_(gen_); }

    /// Uniform integer in [0, n).
    std::uint64_t integer(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
    }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                m(i, j) = stddev * gaussian();
            }
        }
        return m;
    }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Derives an independent stream seed from a base seed and a path of tags
/// (stream kind, round, client, ...). Stable across platforms and runs.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = detail::splitmix64(base);
    for (std::uint64_t p : path) {
        s = detail::splitmix64(s ^ detail::splitmix64(p));
    }
    return s;
}

}  // namespace fedpipe
