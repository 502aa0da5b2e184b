// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fedpipe/config.hpp"
#include "fedpipe/importance.hpp"
#include "fedpipe/model.hpp"
#include "fedpipe/planner.hpp"
#include "fedpipe/quantizer.hpp"

namespace fedpipe {

/// Incremental matrix of one adapter, materialized for upload: B * A.
Matrix preprocess_delta(const LoraAdapter& adapter);

struct AggregateResult {
    Matrix delta;
    std::vector<std::pair<int, double>> weights;  // (client_id, weight), sums to 1
};

/// Weighted aggregation of incremental matrices over the clients that
/// selected this slot and finished the round: weight_i proportional to
/// |D_i| / b_i (or |D_i| alone in datasize mode). Empty input means the slot
/// receives no update this round.
std::optional<AggregateResult> aggregate_slot(
    const std::vector<std::pair<int, Matrix>>& deltas, std::span<const long> dataset_sizes,
    std::span<const int> batches,
    AggregationWeighting weighting = AggregationWeighting::Paper);

/// One edge server's live state across rounds.
struct ClientState {
    EdgeProfile profile;
    int batch = 0;
    int bits = 32;
    std::vector<AttentionBlock> backbone;  // local copy at this client's precision
    std::vector<LoraAdapter> adapters;     // current-round adapters, plan order
    std::map<SlotRef, SensitivityState> sensitivity;
    std::map<SlotRef, double> next_scores;  // importance cached for the next plan
};

/// Merges the broadcast delta into the client backbone at the client's bit
/// level and reinitializes the slot's adapter (B = 0, A Gaussian) so the
/// post-update delta is exactly zero.
void apply_update(ClientState& client, SlotRef slot, const Matrix& delta_global,
                  const QuantizerSet& quantizers, Rng& reinit_rng);

struct ClientRoundRecord {
    int client_id = 0;
    AdapterPlan plan;
    int bits = 32;
    int steps_planned = 0;
    int steps_completed = 0;
    double wall_seconds = 0.0;
    bool included = true;
    std::uint64_t uploaded_bytes = 0;
};

struct SlotAggregateRecord {
    SlotRef slot;
    std::vector<std::pair<int, double>> weights;
};

struct RoundReport {
    int t = 0;
    double eval_loss = 0.0;
    int participants = 0;
    int flagged = 0;
    double under_training_rate = 0.0;  // flagged / participants
    std::uint64_t bytes_up = 0;
    std::vector<ClientRoundRecord> clients;     // client_id order
    std::vector<SlotAggregateRecord> aggregates;
};

/// Synchronized-round campaign: plan, local training against a wall-clock
/// deadline, deadline-miss exclusion, per-slot aggregation, quantized merge,
/// adapter reinitialization, and held-out evaluation. Deterministic in
/// (config, seed) regardless of worker thread count.
class Campaign {
public:
    explicit Campaign(CampaignConfig cfg);

    RoundReport run_round(int t);

    double evaluate_global_loss() const;
    const std::vector<AttentionBlock>& global_model() const { return server_backbone_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    std::vector<ClientState>& clients() { return clients_; }
    const std::vector<int>& excluded_clients() const { return excluded_; }
    const World& world() const { return world_; }
    const CampaignConfig& config() const { return cfg_; }
    const QuantizerSet& quantizers() const { return quantizers_; }

private:
    struct LocalOutcome;

    void run_local(int t, ClientState& client, LocalOutcome& outcome) const;

    CampaignConfig cfg_;
    QuantizerSet quantizers_;
    World world_;
    std::vector<ClientDataset> eval_sets_;
    std::vector<AttentionBlock> server_backbone_;
    std::vector<ClientState> clients_;   // active clients only
    std::vector<int> excluded_;          // memory-infeasible client ids
    long eval_weight_total_ = 0;
    unsigned threads_ = 1;
};

struct CampaignResult {
    struct ClientSummary {
        int client_id = 0;
        int batch = 0;
        int bits = 32;
        std::uint64_t round0_trainable_params = 0;
    };
    std::vector<RoundReport> rounds;
    std::vector<int> excluded_clients;
    std::vector<ClientSummary> clients;
};

CampaignResult run_campaign(const CampaignConfig& cfg);

/// Worker cap from FEDPIPE_SIM_THREADS (0 or unset = hardware concurrency).
unsigned thread_cap_from_env();

}  // namespace fedpipe
