// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedpipe/svd.hpp"
#include "fedpipe/tape.hpp"
#include "oracles.hpp"

using namespace fedpipe;

namespace {

// Mini attention-style computation built directly from tape primitives:
// rowsoftmax(X W (X K)^T / sqrt(d)) (X V) against a fixed target.
Tape::NodeId attention_like_loss(Tape& tape, Tape::NodeId x, Tape::NodeId w, Tape::NodeId k,
                                 Tape::NodeId v, const Matrix& target) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(tape.value(x).cols()));
    Tape::NodeId q = tape.matmul(x, w);
    Tape::NodeId key = tape.matmul(x, k);
    Tape::NodeId attn = tape.row_softmax(tape.scale(tape.matmul(q, key, false, true), inv_sqrt_d));
    Tape::NodeId out = tape.matmul(attn, tape.matmul(x, v));
    return tape.square_loss(out, tape.leaf(target));
}

bool bits_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) ==
           0;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("gradient of a sum of squares") {
    Tape tape;
    Matrix w(1, 1);
    w << 3.0;
    Tape::NodeId leaf = tape.leaf(w);
    Tape::NodeId loss = tape.square_loss(leaf, tape.leaf(Matrix::Zero(1, 1)));
    std::vector<Tape::NodeId> params{leaf};
    auto grads = gradient_of_loss(tape, loss, params);
    CHECK(grads.size() == 1);
    CHECK(grads[0](0, 0) == 6.0);
}

TEST_CASE("uniform logits through row-softmax give zero gradient") {
    Tape tape;
    Matrix logits = Matrix::Constant(4, 4, 0.7);
    Tape::NodeId leaf = tape.leaf(logits);
    Tape::NodeId soft = tape.row_softmax(leaf);
    Tape::NodeId loss = tape.square_loss(soft, tape.leaf(Matrix::Constant(4, 4, 0.25)));
    CHECK(tape.value(loss)(0, 0) == 0.0);
    std::vector<Tape::NodeId> params{leaf};
    auto grads = gradient_of_loss(tape, loss, params);
    CHECK(grads[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention-style gradients match central finite differences") {
    Rng rng(7);
    const Matrix x = rng.gaussian_matrix(8, 4);
    const Matrix target = rng.gaussian_matrix(8, 4);
    std::vector<Matrix> params{rng.gaussian_matrix(4, 4, 0.5), rng.gaussian_matrix(4, 4, 0.5),
                               rng.gaussian_matrix(4, 4, 0.5)};

    auto loss_fn = [&](const std::vector<Matrix>& p) {
        Tape tape;
        Tape::NodeId loss = attention_like_loss(tape, tape.leaf(x), tape.leaf(p[0]),
                                                tape.leaf(p[1]), tape.leaf(p[2]), target);
        return tape.value(loss)(0, 0);
    };

    Tape tape;
    Tape::NodeId w = tape.leaf(params[0]);
    Tape::NodeId k = tape.leaf(params[1]);
    Tape::NodeId v = tape.leaf(params[2]);
    Tape::NodeId loss = attention_like_loss(tape, tape.leaf(x), w, k, v, target);
    std::vector<Tape::NodeId> leaves{w, k, v};
    auto grads = gradient_of_loss(tape, loss, leaves);

    for (std::size_t which = 0; which < params.size(); ++which) {
        const Matrix fd = oracles::finite_difference_gradient(loss_fn, params, which);
        for (Eigen::Index i = 0; i < fd.rows(); ++i) {
            for (Eigen::Index j = 0; j < fd.cols(); ++j) {
                if (std::abs(grads[which](i, j)) > 1e-6) {
                    CHECK(std::abs(fd(i, j) - grads[which](i, j)) /
                              std::abs(grads[which](i, j)) <=
                          1e-4);
                }
            }
        }
    }
}

TEST_CASE("every primitive agrees with finite differences") {
    Rng rng(21);
    const Matrix target = rng.gaussian_matrix(3, 3);
    std::vector<Matrix> params{rng.gaussian_matrix(3, 3), rng.gaussian_matrix(3, 3)};

    struct Case {
        const char* name;
        std::function<Tape::NodeId(Tape&, Tape::NodeId, Tape::NodeId)> build;
    };
    const std::vector<Case> cases = {
        {"matmul", [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.matmul(a, b); }},
        {"matmul_tb",
         [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.matmul(a, b, false, true); }},
        {"matmul_ta",
         [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.matmul(a, b, true, false); }},
        {"matmul_tab",
         [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.matmul(a, b, true, true); }},
        {"add", [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.add(a, b); }},
        {"hadamard", [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.hadamard(a, b); }},
        {"scale",
         [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.add(t.scale(a, -1.7), b); }},
        {"row_softmax",
         [](Tape& t, Tape::NodeId a, Tape::NodeId b) { return t.matmul(t.row_softmax(a), b); }},
    };

    for (const Case& c : cases) {
        CAPTURE(c.name);
        auto loss_fn = [&](const std::vector<Matrix>& p) {
            Tape tape;
            Tape::NodeId out = c.build(tape, tape.leaf(p[0]), tape.leaf(p[1]));
            return tape.value(tape.square_loss(out, tape.leaf(target)))(0, 0);
        };
        Tape tape;
        Tape::NodeId a = tape.leaf(params[0]);
        Tape::NodeId b = tape.leaf(params[1]);
        Tape::NodeId loss = tape.square_loss(c.build(tape, a, b), tape.leaf(target));
        std::vector<Tape::NodeId> leaves{a, b};
        auto grads = gradient_of_loss(tape, loss, leaves);
        for (std::size_t which = 0; which < 2; ++which) {
            const Matrix fd = oracles::finite_difference_gradient(loss_fn, params, which);
            CHECK((fd - grads[which]).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
}

TEST_CASE("error paths") {
    Tape tape;
    Tape::NodeId a = tape.leaf(Matrix::Ones(2, 2));
    Tape::NodeId b = tape.leaf(Matrix::Ones(3, 2));
    CHECK_THROWS_AS(tape.matmul(a, b), ShapeError);
    CHECK_THROWS_AS(tape.add(a, b), ShapeError);

    std::vector<Tape::NodeId> params{a};
    CHECK_THROWS_AS(gradient_of_loss(tape, a, params), ContractError);  // non-scalar loss

    Tape::NodeId loss = tape.square_loss(a, tape.leaf(Matrix::Zero(2, 2)));
    std::vector<Tape::NodeId> not_leaf{loss};
    CHECK_THROWS_AS(gradient_of_loss(tape, loss, not_leaf), UnknownLeafError);
    std::vector<Tape::NodeId> bogus{Tape::NodeId{9999}};
    CHECK_THROWS_AS(gradient_of_loss(tape, loss, bogus), UnknownLeafError);
}

TEST_CASE("replay determinism: identical tapes give bit-identical gradients") {
    auto build = [](Tape& tape, std::vector<Tape::NodeId>& leaves) {
        Rng rng(99);
        Tape::NodeId x = tape.leaf(rng.gaussian_matrix(6, 5));
        Tape::NodeId w = tape.leaf(rng.gaussian_matrix(5, 5));
        leaves = {x, w};
        Tape::NodeId out = tape.row_softmax(tape.matmul(x, w));
        return tape.square_loss(out, tape.leaf(Matrix::Zero(6, 5)));
    };
    Tape t1, t2;
    std::vector<Tape::NodeId> leaves1, leaves2;
    Tape::NodeId l1 = build(t1, leaves1);
    Tape::NodeId l2 = build(t2, leaves2);
    auto g1 = gradient_of_loss(t1, l1, leaves1);
    auto g1_again = gradient_of_loss(t1, l1, leaves1);
    auto g2 = gradient_of_loss(t2, l2, leaves2);
    for (std::size_t i = 0; i < g1.size(); ++i) {
        CHECK(bits_equal(g1[i], g1_again[i]));
        CHECK(bits_equal(g1[i], g2[i]));
    }
}

TEST_CASE("singular values: rank-1 outer product and identity") {
    Matrix b(2, 1), a(1, 2);
    b << 2, 0;
    a << 3, 0;
    Vector sv = singular_values_of_product(b, a);
    REQUIRE(sv.size() == 2);
    CHECK(sv(0) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(sv(1) == doctest::Approx(0.0).epsilon(1e-12));

    Vector id = singular_values_of_product(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    CHECK(id(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(id(1) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(singular_values_of_product(Matrix::Ones(2, 3), Matrix::Ones(2, 2)),
                    ShapeError);
}

TEST_CASE("singular values match the brute-force oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        const int di = 2 + static_cast<int>(rng.integer(7));
        const int dout = 2 + static_cast<int>(rng.integer(7));
        const int r = 1 + static_cast<int>(rng.integer(4));
        const Matrix b = rng.gaussian_matrix(di, r);
        const Matrix a = rng.gaussian_matrix(r, dout);
        const Vector sv = singular_values_of_product(b, a);
        const Eigen::VectorXd reference = oracles::singular_values(b * a);
        REQUIRE(sv.size() == reference.size());
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            CHECK(std::abs(sv(i) - reference(i)) <= 1e-9);
        }
    }
    // The 6x2 by 2x5 case named in the contract.
    const Matrix b = rng.gaussian_matrix(6, 2);
    const Matrix a = rng.gaussian_matrix(2, 5);
    const Vector sv = singular_values_of_product(b, a);
    const Eigen::VectorXd reference = oracles::singular_values(b * a);
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        CHECK(std::abs(sv(i) - reference(i)) <= 1e-9);
    }
}

TEST_CASE("singular value properties: sign, order, count, Frobenius identity") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const int di = 2 + static_cast<int>(rng.integer(15));
        const int dout = 2 + static_cast<int>(rng.integer(15));
        const int r = 1 + static_cast<int>(rng.integer(5));
        const Matrix b = rng.gaussian_matrix(di, r);
        const Matrix a = rng.gaussian_matrix(r, dout);
        const Vector sv = singular_values_of_product(b, a);
        REQUIRE(sv.size() == std::min(di, dout));
        int nonzero = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            CHECK(sv(i) >= 0.0);
            if (i > 0) {
                CHECK(sv(i) <= sv(i - 1));
            }
            if (sv(i) > 1e-12) {
                ++nonzero;
            }
        }
        CHECK(nonzero <= r);
        const double frob = (b * a).squaredNorm();
        CHECK(sv.squaredNorm() == doctest::Approx(frob).epsilon(1e-9));
    }
}

}  // TEST_SUITE
