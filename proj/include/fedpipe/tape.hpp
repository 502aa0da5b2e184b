// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedpipe/matrix.hpp"

namespace fedpipe {

/// Row-wise softmax with max subtraction. Shared by the tape primitive and
/// plain forward passes so both produce bit-identical values.
Matrix row_softmax_value(const Matrix& logits);

/// Records a straight-line program over a closed primitive set:
/// matmul (with optional operand transposes), add, scale, row-softmax,
/// elementwise product, and mean-square loss. Single-owner; not shared
/// across concurrent tasks. Gradient evaluation replays the recording in
/// exact reverse order and is pure given the tape.
class Tape {
public:
    struct NodeId {
        std::int32_t index = -1;
        friend bool operator==(NodeId, NodeId) = default;
    };

    /// Records an input matrix. Leaves are the only nodes gradients can be
    /// requested for.
    NodeId leaf(Matrix value);

    /// C = op(a) * op(b) where op is an optional transpose.
    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId row_softmax(NodeId a);
    /// Elementwise product.
    NodeId hadamard(NodeId a, NodeId b);
    /// Scalar node: mean over all elements of (pred - target)^2.
    NodeId square_loss(NodeId pred, NodeId target);

    const Matrix& value(NodeId id) const;
    bool is_leaf(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t { Leaf, MatMul, Add, Scale, RowSoftmax, Hadamard, SquareLoss };

    struct Node {
        Op op;
        std::int32_t a = -1;
        std::int32_t b = -1;
        bool trans_a = false;
        bool trans_b = false;
        double factor = 1.0;
        Matrix value;
    };

    NodeId push(Node node);
    const Node& at(NodeId id) const;

    std::vector<Node> nodes_;

    friend std::vector<Matrix> gradient_of_loss(const Tape& tape, NodeId loss,
                                                std::span<const NodeId> params);
};

/// Reverse-mode gradients of a scalar loss node with respect to recorded
/// leaves. Throws ContractError if the loss node is not 1x1 and
/// UnknownLeafError if a requested parameter is not a leaf on this tape.
std::vector<Matrix> gradient_of_loss(const Tape& tape, Tape::NodeId loss,
                                     std::span<const Tape::NodeId> params);

}  // namespace fedpipe
