// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/svd.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <string>

namespace fedpipe {

namespace {

// Upper-trapezoidal R factor of a thin QR, min(rows,cols) x cols.
Matrix qr_r_factor(const Matrix& m) {
    Eigen::HouseholderQR<Matrix> qr(m);
    const Eigen::Index k = std::min(m.rows(), m.cols());
    Matrix r = Matrix::Zero(k, m.cols());
    r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    return r;
}

}  // namespace

Vector singular_values_of_product(const Matrix& b, const Matrix& a) {
    if (b.cols() != a.rows()) {
        throw ShapeError("singular_values_of_product: B is " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + " but A is " + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()));
    }
    const Eigen::Index out_len = std::min(b.rows(), a.cols());
    Vector sv = Vector::Zero(out_len);
    if (b.cols() == 0 || out_len == 0) {
        return sv;
    }

    // B = Qb Rb, A^T = Qa Ra  =>  BA = Qb (Rb Ra^T) Qa^T with orthonormal Qb, Qa,
    // so the spectrum of BA is the spectrum of the small core Rb Ra^T.
    Matrix rb = qr_r_factor(b);
    Matrix ra = qr_r_factor(a.transpose());
    Matrix core = rb * ra.transpose();

    Eigen::JacobiSVD<Matrix> svd(core);
    const Eigen::Index k = std::min(svd.singularValues().size(), out_len);
    sv.head(k) = svd.singularValues().head(k);
    return sv;
}

}  // namespace fedpipe
