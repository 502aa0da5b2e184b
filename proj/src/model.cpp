// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/model.hpp"

#include <cmath>
#include <set>
#include <string>

namespace fedpipe {

namespace {

// Stream tags for derive_seed; keep values stable, they are part of the
// determinism contract.
enum Stream : std::uint64_t {
    kBackbone = 1,
    kTeacherShift = 2,
    kClientMean = 3,
    kTrainData = 4,
    kEvalData = 5,
};

Matrix gaussian_block_weight(Rng& rng, int d) {
    // Entry std 1/sqrt(d) keeps pre-softmax logits O(1).
    return rng.gaussian_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
}

std::vector<AttentionBlock> random_blocks(std::uint64_t seed, int n_layers, int d) {
    std::vector<AttentionBlock> blocks;
    blocks.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        Rng rng(derive_seed(seed, {kBackbone, static_cast<std::uint64_t>(l)}));
        AttentionBlock block;
        block.layer_index = l;
        block.wq = gaussian_block_weight(rng, d);
        block.wk = gaussian_block_weight(rng, d);
        block.wv = gaussian_block_weight(rng, d);
        block.wo = gaussian_block_weight(rng, d);
        blocks.push_back(std::move(block));
    }
    return blocks;
}

Vector client_mean(std::uint64_t seed, int client_id, int d, double non_iid_scale) {
    Rng rng(derive_seed(seed, {kClientMean, static_cast<std::uint64_t>(client_id)}));
    Vector mean(d);
    for (int j = 0; j < d; ++j) {
        mean(j) = non_iid_scale * rng.gaussian();
    }
    return mean;
}

ClientDataset draw_dataset(std::uint64_t seed, std::uint64_t stream,
                           const std::vector<AttentionBlock>& teacher, int client_id, int d,
                           int s, int n_samples, double noise_sigma, double non_iid_scale) {
    Rng rng(derive_seed(seed, {stream, static_cast<std::uint64_t>(client_id)}));
    const Vector mean = client_mean(seed, client_id, d, non_iid_scale);
    ClientDataset ds;
    ds.client_id = client_id;
    ds.inputs.reserve(static_cast<std::size_t>(n_samples));
    ds.targets.reserve(static_cast<std::size_t>(n_samples));
    for (int n = 0; n < n_samples; ++n) {
        Matrix x(s, d);
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j < d; ++j) {
                x(i, j) = mean(j) + rng.gaussian();
            }
        }
        Matrix y = attention_forward(teacher, x);
        if (noise_sigma != 0.0) {
            y += rng.gaussian_matrix(s, d, noise_sigma);
        }
        ds.inputs.push_back(std::move(x));
        ds.targets.push_back(std::move(y));
    }
    return ds;
}

}  // namespace

std::string_view slot_name(WeightSlot slot) {
    switch (slot) {
    case WeightSlot::Query: return "q";
    case WeightSlot::Key: return "k";
    case WeightSlot::Value: return "v";
    case WeightSlot::Output: return "o";
    }
    return "?";
}

std::optional<WeightSlot> slot_from_name(std::string_view name) {
    if (name == "q") return WeightSlot::Query;
    if (name == "k") return WeightSlot::Key;
    if (name == "v") return WeightSlot::Value;
    if (name == "o") return WeightSlot::Output;
    return std::nullopt;
}

const Matrix& AttentionBlock::weight(WeightSlot slot) const {
    switch (slot) {
    case WeightSlot::Query: return wq;
    case WeightSlot::Key: return wk;
    case WeightSlot::Value: return wv;
    case WeightSlot::Output: return wo;
    }
    throw ParameterError("unknown weight slot");
}

Matrix& AttentionBlock::weight(WeightSlot slot) {
    return const_cast<Matrix&>(static_cast<const AttentionBlock&>(*this).weight(slot));
}

LoraAdapter make_adapter(SlotRef target, int d_i, int d_o, int rank, Rng& rng) {
    if (rank < 1 || rank > std::min(d_i, d_o)) {
        throw ParameterError("make_adapter: rank " + std::to_string(rank) +
                             " out of range for " + std::to_string(d_i) + "x" +
                             std::to_string(d_o));
    }
    LoraAdapter adapter;
    adapter.target = target;
    adapter.rank = rank;
    adapter.B = Matrix::Zero(d_i, rank);
    adapter.A = rng.gaussian_matrix(rank, d_o, 1.0 / std::sqrt(static_cast<double>(rank)));
    return adapter;
}

Matrix attention_forward(const std::vector<AttentionBlock>& blocks, const Matrix& x) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    Matrix h = x;
    for (const AttentionBlock& block : blocks) {
        Matrix q = h * block.wq;
        Matrix k = h * block.wk;
        Matrix v = h * block.wv;
        Matrix attn = row_softmax_value(inv_sqrt_d * (q * k.transpose()));
        h = (attn * v) * block.wo;
    }
    return h;
}

World build_world(std::uint64_t seed, int n_layers, int d, int s, int n_clients,
                  int samples_per_client, double shift_scale, double noise_sigma,
                  double non_iid_scale) {
    std::vector<int> sizes(static_cast<std::size_t>(n_clients), samples_per_client);
    return build_world_sized(seed, n_layers, d, s, sizes, shift_scale, noise_sigma,
                             non_iid_scale);
}

World build_world_sized(std::uint64_t seed, int n_layers, int d, int s,
                        std::span<const int> samples_per_client, double shift_scale,
                        double noise_sigma, double non_iid_scale) {
    if (n_layers < 1 || d < 4 || s < 1 || samples_per_client.empty()) {
        throw ParameterError("build_world: need n_layers >= 1, d >= 4, s >= 1, clients >= 1");
    }
    World world;
    world.d = d;
    world.s = s;
    world.backbone = random_blocks(seed, n_layers, d);

    world.teacher = world.backbone;
    for (int l = 0; l < n_layers; ++l) {
        Rng rng(derive_seed(seed, {kTeacherShift, static_cast<std::uint64_t>(l)}));
        AttentionBlock& block = world.teacher[static_cast<std::size_t>(l)];
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            Matrix shift = rng.gaussian_matrix(d, d, 1.0);
            block.weight(static_cast<WeightSlot>(m)) += shift_scale * shift;
        }
    }

    for (int c = 0; c < static_cast<int>(samples_per_client.size()); ++c) {
        world.datasets.push_back(draw_dataset(seed, kTrainData, world.teacher, c, d, s,
                                              samples_per_client[static_cast<std::size_t>(c)],
                                              noise_sigma, non_iid_scale));
    }
    return world;
}

std::vector<ClientDataset> draw_eval_datasets(std::uint64_t seed,
                                              const std::vector<AttentionBlock>& teacher,
                                              int d, int s, int n_clients, int samples_each,
                                              double noise_sigma, double non_iid_scale) {
    std::vector<ClientDataset> sets;
    sets.reserve(static_cast<std::size_t>(n_clients));
    for (int c = 0; c < n_clients; ++c) {
        sets.push_back(draw_dataset(seed, kEvalData, teacher, c, d, s, samples_each,
                                    noise_sigma, non_iid_scale));
    }
    return sets;
}

LossGraph forward_loss(const std::vector<AttentionBlock>& backbone,
                       std::span<const LoraAdapter> adapters,
                       std::span<const Matrix> inputs, std::span<const Matrix> targets,
                       Tape& tape) {
    if (inputs.size() != targets.size() || inputs.empty()) {
        throw ShapeError("forward_loss: need equally many inputs and targets");
    }
    const int n_layers = static_cast<int>(backbone.size());
    const int d = static_cast<int>(backbone.front().wq.rows());

    std::set<std::pair<int, int>> seen;
    for (const LoraAdapter& adapter : adapters) {
        if (adapter.target.layer < 0 || adapter.target.layer >= n_layers) {
            throw ConfigError("forward_loss: adapter targets layer " +
                              std::to_string(adapter.target.layer) + " of " +
                              std::to_string(n_layers));
        }
        if (!seen.insert({adapter.target.layer, static_cast<int>(adapter.target.slot)}).second) {
            throw ConfigError("forward_loss: duplicate adapter on layer " +
                              std::to_string(adapter.target.layer) + " slot " +
                              std::string(slot_name(adapter.target.slot)));
        }
    }

    LossGraph graph;
    graph.adapter_leaves.reserve(adapters.size());

    // Effective weight nodes per (layer, slot); adapter leaves recorded once
    // and shared across samples.
    std::vector<std::array<Tape::NodeId, kSlotsPerLayer>> weights(
        static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] =
                tape.leaf(backbone[static_cast<std::size_t>(l)].weight(static_cast<WeightSlot>(m)));
        }
    }
    for (const LoraAdapter& adapter : adapters) {
        Tape::NodeId b = tape.leaf(adapter.B);
        Tape::NodeId a = tape.leaf(adapter.A);
        graph.adapter_leaves.emplace_back(b, a);
        auto& slot_node = weights[static_cast<std::size_t>(adapter.target.layer)]
                                 [static_cast<std::size_t>(adapter.target.slot)];
        slot_node = tape.add(slot_node, tape.matmul(b, a));
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tape::NodeId total{-1};
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        Tape::NodeId h = tape.leaf(inputs[n]);
        for (int l = 0; l < n_layers; ++l) {
            const auto& w = weights[static_cast<std::size_t>(l)];
            Tape::NodeId q = tape.matmul(h, w[0]);
            Tape::NodeId k = tape.matmul(h, w[1]);
            Tape::NodeId v = tape.matmul(h, w[2]);
            Tape::NodeId attn = tape.row_softmax(tape.scale(tape.matmul(q, k, false, true),
                                                            inv_sqrt_d));
            h = tape.matmul(tape.matmul(attn, v), w[3]);
        }
        Tape::NodeId sample_loss = tape.square_loss(h, tape.leaf(targets[n]));
        total = (total.index < 0) ? sample_loss : tape.add(total, sample_loss);
    }
    graph.loss = tape.scale(total, 1.0 / static_cast<double>(inputs.size()));
    return graph;
}

std::uint64_t trainable_param_count(std::span<const LoraAdapter> adapters) {
    std::uint64_t count = 0;
    for (const LoraAdapter& adapter : adapters) {
        count += static_cast<std::uint64_t>(adapter.rank) *
                 static_cast<std::uint64_t>(adapter.B.rows() + adapter.A.cols());
    }
    return count;
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, const AdamConfig& cfg) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
        throw ShapeError("adam_step: parameter and gradient shapes disagree");
    }
    if (state.step == 0) {
        state.m = Matrix::Zero(param.rows(), param.cols());
        state.v = Matrix::Zero(param.rows(), param.cols());
    }
    state.step += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    Matrix m_hat = state.m / bias1;
    Matrix v_hat = state.v / bias2;
    param -= cfg.learning_rate *
             m_hat.cwiseQuotient(v_hat.cwiseSqrt() + Matrix::Constant(param.rows(), param.cols(), cfg.epsilon));
}

}  // namespace fedpipe
