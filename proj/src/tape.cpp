// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/tape.hpp"

#include <string>

namespace fedpipe {

namespace {

std::string shape_of(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix row_softmax_value(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double row_max = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - row_max).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

Tape::NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::at(NodeId id) const {
    if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size()) {
        throw ContractError("tape: node reference out of range");
    }
    return nodes_[static_cast<std::size_t>(id.index)];
}

const Matrix& Tape::value(NodeId id) const { return at(id).value; }

bool Tape::is_leaf(NodeId id) const { return at(id).op == Op::Leaf; }

Tape::NodeId Tape::leaf(Matrix value) {
    require_finite(value, "tape leaf");
    return push(Node{Op::Leaf, -1, -1, false, false, 1.0, std::move(value)});
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Matrix& va = at(a).value;
    const Matrix& vb = at(b).value;
    const Eigen::Index inner_a = trans_a ? va.rows() : va.cols();
    const Eigen::Index inner_b = trans_b ? vb.cols() : vb.rows();
    if (inner_a != inner_b) {
        throw ShapeError("matmul: inner dimensions disagree (" + shape_of(va) + " vs " +
                         shape_of(vb) + ")");
    }
    Matrix value;
    if (!trans_a && !trans_b) {
        value = va * vb;
    } else if (!trans_a && trans_b) {
        value = va * vb.transpose();
    } else if (trans_a && !trans_b) {
        value = va.transpose() * vb;
    } else {
        value = va.transpose() * vb.transpose();
    }
    return push(Node{Op::MatMul, a.index, b.index, trans_a, trans_b, 1.0, std::move(value)});
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Matrix& va = at(a).value;
    const Matrix& vb = at(b).value;
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
        throw ShapeError("add: shapes disagree (" + shape_of(va) + " vs " + shape_of(vb) + ")");
    }
    return push(Node{Op::Add, a.index, b.index, false, false, 1.0, va + vb});
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
    return push(Node{Op::Scale, a.index, -1, false, false, factor, factor * at(a).value});
}

Tape::NodeId Tape::row_softmax(NodeId a) {
    return push(Node{Op::RowSoftmax, a.index, -1, false, false, 1.0,
                     row_softmax_value(at(a).value)});
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
    const Matrix& va = at(a).value;
    const Matrix& vb = at(b).value;
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
        throw ShapeError("hadamard: shapes disagree (" + shape_of(va) + " vs " + shape_of(vb) +
                         ")");
    }
    return push(Node{Op::Hadamard, a.index, b.index, false, false, 1.0,
                     va.cwiseProduct(vb)});
}

Tape::NodeId Tape::square_loss(NodeId pred, NodeId target) {
    const Matrix& vp = at(pred).value;
    const Matrix& vt = at(target).value;
    if (vp.rows() != vt.rows() || vp.cols() != vt.cols()) {
        throw ShapeError("square_loss: shapes disagree (" + shape_of(vp) + " vs " +
                         shape_of(vt) + ")");
    }
    Matrix value(1, 1);
    value(0, 0) = (vp - vt).squaredNorm() / static_cast<double>(vp.size());
    return push(Node{Op::SquareLoss, pred.index, target.index, false, false, 1.0,
                     std::move(value)});
}

std::vector<Matrix> gradient_of_loss(const Tape& tape, Tape::NodeId loss,
                                     std::span<const Tape::NodeId> params) {
    const auto& loss_node = tape.at(loss);
    if (loss_node.value.rows() != 1 || loss_node.value.cols() != 1) {
        throw ContractError("gradient_of_loss: loss node is not scalar-valued");
    }
    for (Tape::NodeId p : params) {
        if (p.index < 0 || static_cast<std::size_t>(p.index) >= tape.nodes_.size() ||
            tape.nodes_[static_cast<std::size_t>(p.index)].op != Tape::Op::Leaf) {
            throw UnknownLeafError("gradient_of_loss: parameter is not a leaf on this tape");
        }
    }

    std::vector<Matrix> adjoint(tape.nodes_.size());
    auto accumulate = [&](std::int32_t idx, const Matrix& delta) {
        Matrix& slot = adjoint[static_cast<std::size_t>(idx)];
        if (slot.size() == 0) {
            slot = delta;
        } else {
            slot += delta;
        }
    };

    adjoint[static_cast<std::size_t>(loss.index)] = Matrix::Ones(1, 1);

    // Exact reverse recording order.
    for (std::int32_t i = loss.index; i >= 0; --i) {
        const Matrix& g = adjoint[static_cast<std::size_t>(i)];
        if (g.size() == 0) {
            continue;
        }
        const auto& node = tape.nodes_[static_cast<std::size_t>(i)];
        switch (node.op) {
        case Tape::Op::Leaf:
            break;
        case Tape::Op::MatMul: {
            const Matrix& va = tape.nodes_[static_cast<std::size_t>(node.a)].value;
            const Matrix& vb = tape.nodes_[static_cast<std::size_t>(node.b)].value;
            if (!node.trans_a && !node.trans_b) {
                accumulate(node.a, g * vb.transpose());
                accumulate(node.b, va.transpose() * g);
            } else if (!node.trans_a && node.trans_b) {
                accumulate(node.a, g * vb);
                accumulate(node.b, g.transpose() * va);
            } else if (node.trans_a && !node.trans_b) {
                accumulate(node.a, vb * g.transpose());
                accumulate(node.b, va * g);
            } else {
                accumulate(node.a, vb.transpose() * g.transpose());
                accumulate(node.b, g.transpose() * va.transpose());
            }
            break;
        }
        case Tape::Op::Add:
            accumulate(node.a, g);
            accumulate(node.b, g);
            break;
        case Tape::Op::Scale:
            accumulate(node.a, node.factor * g);
            break;
        case Tape::Op::RowSoftmax: {
            const Matrix& y = node.value;
            Matrix dx(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                dx.row(r) = y.row(r).cwiseProduct(g.row(r) - Eigen::RowVectorXd::Constant(y.cols(), dot));
            }
            accumulate(node.a, dx);
            break;
        }
        case Tape::Op::Hadamard: {
            const Matrix& va = tape.nodes_[static_cast<std::size_t>(node.a)].value;
            const Matrix& vb = tape.nodes_[static_cast<std::size_t>(node.b)].value;
            accumulate(node.a, g.cwiseProduct(vb));
            accumulate(node.b, g.cwiseProduct(va));
            break;
        }
        case Tape::Op::SquareLoss: {
            const Matrix& vp = tape.nodes_[static_cast<std::size_t>(node.a)].value;
            const Matrix& vt = tape.nodes_[static_cast<std::size_t>(node.b)].value;
            const double w = g(0, 0) * 2.0 / static_cast<double>(vp.size());
            Matrix diff = w * (vp - vt);
            accumulate(node.a, diff);
            accumulate(node.b, -diff);
            break;
        }
        }
    }

    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (Tape::NodeId p : params) {
        Matrix& slot = adjoint[static_cast<std::size_t>(p.index)];
        if (slot.size() == 0) {
            const Matrix& v = tape.nodes_[static_cast<std::size_t>(p.index)].value;
            grads.push_back(Matrix::Zero(v.rows(), v.cols()));
        } else {
            grads.push_back(std::move(slot));
        }
    }
    return grads;
}

}  // namespace fedpipe
