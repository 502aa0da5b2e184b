// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedpipe/matrix.hpp"
#include "fedpipe/tape.hpp"

namespace fedpipe {

/// The four per-layer attention weight slots.
enum class WeightSlot : int { Query = 0, Key = 1, Value = 2, Output = 3 };
inline constexpr int kSlotsPerLayer = 4;

std::string_view slot_name(WeightSlot slot);          // "q", "k", "v", "o"
std::optional<WeightSlot> slot_from_name(std::string_view name);

struct SlotRef {
    int layer = 0;
    WeightSlot slot = WeightSlot::Query;
    friend auto operator<=>(const SlotRef&, const SlotRef&) = default;
};

/// Single-head attention block. Weights are frozen after construction; the
/// only sanctioned mutation is merging aggregated deltas between rounds.
struct AttentionBlock {
    int layer_index = 0;
    Matrix wq, wk, wv, wo;

    const Matrix& weight(WeightSlot slot) const;
    Matrix& weight(WeightSlot slot);
};

/// Rank decomposition pair attached in parallel to one frozen weight, so the
/// effective weight is W + B*A.
struct LoraAdapter {
    SlotRef target;
    int rank = 0;
    Matrix B;  // d_i x r
    Matrix A;  // r x d_o

    Matrix delta() const { return B * A; }
};

/// Fresh adapter: B = 0 so the initial delta is exactly zero, A Gaussian with
/// standard deviation 1/sqrt(rank).
LoraAdapter make_adapter(SlotRef target, int d_i, int d_o, int rank, Rng& rng);

struct ClientDataset {
    int client_id = 0;
    std::vector<Matrix> inputs;   // each s x d
    std::vector<Matrix> targets;  // each s x d
    std::size_t size() const { return inputs.size(); }
};

struct World {
    int d = 0;
    int s = 0;
    std::vector<AttentionBlock> backbone;
    std::vector<AttentionBlock> teacher;
    std::vector<ClientDataset> datasets;
};

/// Plain forward pass through a block stack (no adapters, no tape). Used for
/// target generation and anywhere gradients are not needed.
Matrix attention_forward(const std::vector<AttentionBlock>& blocks, const Matrix& x);

/// Synthetic pre-trained backbone, a teacher shifted from it by
/// shift_scale * Gaussian per weight entry, and non-IID client datasets with
/// targets = teacher(x) + noise_sigma * Gaussian.
World build_world(std::uint64_t seed, int n_layers, int d, int s, int n_clients,
                  int samples_per_client, double shift_scale, double noise_sigma,
                  double non_iid_scale = 1.0);

/// As build_world but with an explicit per-client sample count.
World build_world_sized(std::uint64_t seed, int n_layers, int d, int s,
                        std::span<const int> samples_per_client, double shift_scale,
                        double noise_sigma, double non_iid_scale);

/// Extra samples for the same client population (held-out evaluation data);
/// the client-specific input means match build_world for the same seed.
std::vector<ClientDataset> draw_eval_datasets(std::uint64_t seed,
                                              const std::vector<AttentionBlock>& teacher,
                                              int d, int s, int n_clients, int samples_each,
                                              double noise_sigma, double non_iid_scale);

/// Loss node plus the recorded (B, A) leaves per adapter, in adapter order.
struct LossGraph {
    Tape::NodeId loss;
    std::vector<std::pair<Tape::NodeId, Tape::NodeId>> adapter_leaves;
};

/// Records the adapted forward pass and mean-squared-error loss for a batch:
/// per layer Q = X(Wq+Dq), K = X(Wk+Dk), V = X(Wv+Dv),
/// H = rowsoftmax(Q K^T / sqrt(d)) V, out = H(Wo+Do), chained across layers.
LossGraph forward_loss(const std::vector<AttentionBlock>& backbone,
                       std::span<const LoraAdapter> adapters,
                       std::span<const Matrix> inputs, std::span<const Matrix> targets,
                       Tape& tape);

/// Total trainable entries: sum over adapters of rank * (d_i + d_o).
std::uint64_t trainable_param_count(std::span<const LoraAdapter> adapters);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Matrix m;
    Matrix v;
    long step = 0;
};

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, const AdamConfig& cfg);

}  // namespace fedpipe
