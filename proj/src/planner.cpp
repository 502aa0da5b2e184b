// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/planner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedpipe {

void RankMenu::validate() const {
    for (int m = 0; m < kSlotsPerLayer; ++m) {
        const auto& ranks = per_slot[static_cast<std::size_t>(m)];
        if (ranks.empty()) {
            throw ParameterError("rank menu for slot " +
                                 std::string(slot_name(static_cast<WeightSlot>(m))) +
                                 " is empty");
        }
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            if (ranks[i] < 1 || (i > 0 && ranks[i] >= ranks[i - 1])) {
                throw ParameterError("rank menu for slot " +
                                     std::string(slot_name(static_cast<WeightSlot>(m))) +
                                     " must be strictly decreasing with ranks >= 1");
            }
        }
    }
}

std::vector<int> allocate_batches(std::span<const EdgeProfile> profiles, int b_min, int b_max) {
    if (profiles.empty()) {
        throw ParameterError("allocate_batches: empty profile list");
    }
    if (b_min < 1 || b_max < b_min) {
        throw ParameterError("allocate_batches: need 1 <= b_min <= b_max");
    }
    double c_top = 0.0;
    for (const EdgeProfile& p : profiles) {
        if (!(p.compute_budget > 0.0)) {
            throw ParameterError("allocate_batches: compute budget of client " +
                                 std::to_string(p.client_id) + " must be positive");
        }
        c_top = std::max(c_top, p.compute_budget);
    }
    std::vector<int> batches;
    batches.reserve(profiles.size());
    for (const EdgeProfile& p : profiles) {
        const double ratio = p.compute_budget / c_top;
        int b = static_cast<int>(std::floor(ratio * static_cast<double>(b_max)));
        batches.push_back(std::max(b, b_min));
    }
    return batches;
}

double selection_flops(int rank, int d_i, int d_o, int s) {
    // 2 forward + 4 backward multiply-accumulate passes through the low-rank
    // path, per token.
    return 6.0 * static_cast<double>(s) * static_cast<double>(rank) *
           static_cast<double>(d_i + d_o);
}

double flops_cost(std::span<const Selection> selections, int d, int s) {
    double total = 0.0;
    for (const Selection& sel : selections) {
        total += selection_flops(sel.rank, d, d, s);
    }
    return total;
}

double backbone_flops_per_sample(int n_layers, int d, int s) {
    const double dd = static_cast<double>(d);
    const double ss = static_cast<double>(s);
    // Four s x d by d x d projections plus the two s x s score products.
    return static_cast<double>(n_layers) * (8.0 * ss * dd * dd + 4.0 * ss * ss * dd);
}

namespace {

std::vector<ScoredSlot> sorted_by_score(std::span<const ScoredSlot> scores) {
    std::vector<ScoredSlot> order(scores.begin(), scores.end());
    std::sort(order.begin(), order.end(), [](const ScoredSlot& a, const ScoredSlot& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.slot < b.slot;  // deterministic tie-break
    });
    return order;
}

}  // namespace

AdapterPlan plan_adapters(const EdgeProfile& profile, int batch,
                          std::span<const ScoredSlot> scores, const RankMenu& menu, int d,
                          int s) {
    menu.validate();
    if (batch < 1) {
        throw ParameterError("plan_adapters: batch must be >= 1");
    }
    AdapterPlan plan;
    plan.client_id = profile.client_id;
    plan.batch = batch;

    const double b = static_cast<double>(batch);
    double spent = 0.0;  // per-sample FLOPs committed so far
    for (const ScoredSlot& candidate : sorted_by_score(scores)) {
        for (int rank : menu.ranks(candidate.slot.slot)) {
            const double cost = selection_flops(rank, d, d, s);
            // Feasibility is checked in the b * f_c <= C_max form so the
            // returned plan satisfies the budget constraint exactly.
            if (b * (spent + cost) <= profile.compute_budget) {
                plan.selections.push_back(Selection{candidate.slot, rank});
                spent += cost;
                break;
            }
        }
    }
    plan.flops_per_sample = spent;
    plan.residual_budget = profile.compute_budget / b - spent;
    return plan;
}

AdapterPlan plan_fixed_rank(const EdgeProfile& profile, int batch,
                            std::span<const ScoredSlot> scores, const RankMenu& menu, int d,
                            int s, int rank_override) {
    menu.validate();
    if (batch < 1) {
        throw ParameterError("plan_fixed_rank: batch must be >= 1");
    }
    AdapterPlan plan;
    plan.client_id = profile.client_id;
    plan.batch = batch;

    std::vector<ScoredSlot> order(scores.begin(), scores.end());
    std::sort(order.begin(), order.end(),
              [](const ScoredSlot& a, const ScoredSlot& b) { return a.slot < b.slot; });
    double spent = 0.0;
    for (const ScoredSlot& candidate : order) {
        const int rank = rank_override > 0 ? rank_override : menu.max_rank(candidate.slot.slot);
        if (rank > d) {
            throw ParameterError("plan_fixed_rank: rank " + std::to_string(rank) +
                                 " exceeds weight dimension " + std::to_string(d));
        }
        plan.selections.push_back(Selection{candidate.slot, rank});
        spent += selection_flops(rank, d, d, s);
    }
    plan.flops_per_sample = spent;
    plan.residual_budget = profile.compute_budget / static_cast<double>(batch) - spent;
    return plan;
}

std::uint64_t max_plan_reserve_bytes(const RankMenu& menu, int n_layers, int d) {
    std::uint64_t params = 0;
    for (int m = 0; m < kSlotsPerLayer; ++m) {
        params += static_cast<std::uint64_t>(menu.max_rank(static_cast<WeightSlot>(m))) *
                  static_cast<std::uint64_t>(2 * d);
    }
    params *= static_cast<std::uint64_t>(n_layers);
    // Adapter weights plus Adam first and second moments, 8 bytes each.
    return params * 24;
}

int select_bits(const EdgeProfile& profile, std::uint64_t backbone_param_count,
                std::uint64_t reserve_bytes) {
    if (backbone_param_count < 1) {
        throw ParameterError("select_bits: backbone parameter count must be >= 1");
    }
    for (int bits : {32, 16, 8, 4}) {
        const double backbone_bytes =
            static_cast<double>(backbone_param_count) * static_cast<double>(bits) / 8.0;
        if (backbone_bytes + static_cast<double>(reserve_bytes) <= profile.memory_budget) {
            return bits;
        }
    }
    throw InfeasibleMemoryError("client " + std::to_string(profile.client_id) +
                                ": backbone does not fit the memory budget even at 4 bits");
}

}  // namespace fedpipe
