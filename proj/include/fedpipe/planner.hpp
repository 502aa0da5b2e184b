// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "fedpipe/model.hpp"

namespace fedpipe {

/// Per-edge-server resource profile.
struct EdgeProfile {
    int client_id = 0;
    double compute_budget = 0.0;    // C_max, FLOPS
    double memory_budget = 0.0;     // M_max, bytes
    long dataset_size = 0;          // |D_i|
};

/// Candidate rank list per weight slot, strictly decreasing, ranks >= 1.
struct RankMenu {
    std::array<std::vector<int>, kSlotsPerLayer> per_slot;

    const std::vector<int>& ranks(WeightSlot slot) const {
        return per_slot[static_cast<std::size_t>(slot)];
    }
    int max_rank(WeightSlot slot) const { return ranks(slot).front(); }
    void validate() const;
};

struct Selection {
    SlotRef slot;
    int rank = 0;
};

/// Output of the per-server configuration search.
struct AdapterPlan {
    int client_id = 0;
    int batch = 0;
    std::vector<Selection> selections;
    double flops_per_sample = 0.0;  // f_c of the selections
    double residual_budget = 0.0;   // C_max/b - f_c, FLOPS per sample
};

struct ScoredSlot {
    SlotRef slot;
    double score = 0.0;
};

/// Batch sizes from compute ratios: u_i = C_i / max_j C_j,
/// b_i = floor(u_i * b_max), clamped below by b_min.
std::vector<int> allocate_batches(std::span<const EdgeProfile> profiles, int b_min, int b_max);

/// Per-sample training cost of one low-rank path: 6 * s * r * (d_i + d_o).
double selection_flops(int rank, int d_i, int d_o, int s);

/// Per-sample training cost of a selection set (d_i = d_o = d here).
double flops_cost(std::span<const Selection> selections, int d, int s);

/// Per-sample forward cost of the frozen block stack; the constant term of
/// the round timing model.
double backbone_flops_per_sample(int n_layers, int d, int s);

/// Greedy weight-and-rank search: slots in descending score order, ranks
/// scanned from the top of the menu; the first affordable rank is taken and
/// the per-sample budget C_max/b is decremented. Unaffordable slots are
/// skipped. An empty plan is a valid output.
AdapterPlan plan_adapters(const EdgeProfile& profile, int batch,
                          std::span<const ScoredSlot> scores, const RankMenu& menu, int d,
                          int s);

/// Every slot at its maximum menu rank regardless of budget (the fixed-rank
/// baseline; pass rank_override > 0 to force one rank everywhere).
AdapterPlan plan_fixed_rank(const EdgeProfile& profile, int batch,
                            std::span<const ScoredSlot> scores, const RankMenu& menu, int d,
                            int s, int rank_override = 0);

/// Full-precision bytes reserved for the largest possible adapter set plus
/// its Adam state (weights + two moments, 8 bytes each).
std::uint64_t max_plan_reserve_bytes(const RankMenu& menu, int n_layers, int d);

/// Largest bits in {32, 16, 8, 4} such that
/// backbone_param_count * bits / 8 + reserve_bytes <= memory budget.
/// Throws InfeasibleMemoryError when even 4 bits does not fit.
int select_bits(const EdgeProfile& profile, std::uint64_t backbone_param_count,
                std::uint64_t reserve_bytes);

}  // namespace fedpipe
