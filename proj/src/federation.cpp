// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include "fedpipe/svd.hpp"

namespace fedpipe {

namespace {

// Stream tags (distinct from the model module's 1..5 and the config
// module's 6); part of the determinism contract.
enum Stream : std::uint64_t {
    kAdapterInit = 7,
    kBatchDraw = 8,
    kClientSample = 9,
    kReinit = 10,
};

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) {
        return;
    }
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::scoped_lock lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    for (std::thread& th : pool) {
        th.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

double sample_mse(const std::vector<AttentionBlock>& blocks, const Matrix& x, const Matrix& y) {
    return (attention_forward(blocks, x) - y).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace

unsigned thread_cap_from_env() {
    const char* raw = std::getenv("FEDPIPE_SIM_THREADS");
    unsigned cap = 0;
    if (raw != nullptr && *raw != '\0') {
        char* end = nullptr;
        const unsigned long parsed = std::strtoul(raw, &end, 10);
        if (end != nullptr && *end == '\0') {
            cap = static_cast<unsigned>(parsed);
        }
    }
    if (cap == 0) {
        cap = std::max(1u, std::thread::hardware_concurrency());
    }
    return cap;
}

Matrix preprocess_delta(const LoraAdapter& adapter) {
    if (adapter.B.cols() != adapter.A.rows()) {
        throw ShapeError("preprocess_delta: factor shapes disagree");
    }
    return adapter.B * adapter.A;
}

std::optional<AggregateResult> aggregate_slot(const std::vector<std::pair<int, Matrix>>& deltas,
                                              std::span<const long> dataset_sizes,
                                              std::span<const int> batches,
                                              AggregationWeighting weighting) {
    if (deltas.empty()) {
        return std::nullopt;
    }
    if (dataset_sizes.size() != deltas.size() || batches.size() != deltas.size()) {
        throw ShapeError("aggregate_slot: sizes and batches must align with the deltas");
    }
    const Eigen::Index rows = deltas.front().second.rows();
    const Eigen::Index cols = deltas.front().second.cols();

    double total = 0.0;
    std::vector<double> raw(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (deltas[i].second.rows() != rows || deltas[i].second.cols() != cols) {
            throw ShapeError("aggregate_slot: delta shapes disagree");
        }
        if (dataset_sizes[i] < 1 || batches[i] < 1) {
            throw ParameterError("aggregate_slot: dataset sizes and batches must be >= 1");
        }
        raw[i] = weighting == AggregationWeighting::Paper
                     ? static_cast<double>(dataset_sizes[i]) / static_cast<double>(batches[i])
                     : static_cast<double>(dataset_sizes[i]);
        total += raw[i];
    }

    AggregateResult result;
    result.delta = Matrix::Zero(rows, cols);
    result.weights.reserve(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const double w = raw[i] / total;
        result.weights.emplace_back(deltas[i].first, w);
        result.delta += w * deltas[i].second;
    }
    return result;
}

void apply_update(ClientState& client, SlotRef slot, const Matrix& delta_global,
                  const QuantizerSet& quantizers, Rng& reinit_rng) {
    Matrix& weight = client.backbone[static_cast<std::size_t>(slot.layer)].weight(slot.slot);
    if (weight.rows() != delta_global.rows() || weight.cols() != delta_global.cols()) {
        throw ShapeError("apply_update: delta shape does not match the slot weight");
    }
    weight += quantizers.round_trip(delta_global, client.bits);

    for (LoraAdapter& adapter : client.adapters) {
        if (adapter.target == slot) {
            adapter = make_adapter(slot, static_cast<int>(weight.rows()),
                                   static_cast<int>(weight.cols()), adapter.rank, reinit_rng);
            break;
        }
    }
}

struct Campaign::LocalOutcome {
    int client_index = -1;
    AdapterPlan plan;
    int steps_completed = 0;
    bool flagged = false;
    double wall_seconds = 0.0;
    std::uint64_t uploaded_bytes = 0;
    std::vector<Matrix> deltas;  // one per selection when included
};

Campaign::Campaign(CampaignConfig cfg) : cfg_(std::move(cfg)), quantizers_(cfg_.block_size) {
    validate_config(cfg_);
    threads_ = thread_cap_from_env();

    std::vector<EdgeProfile> profiles = resolve_profiles(cfg_);
    std::vector<int> dataset_sizes;
    dataset_sizes.reserve(profiles.size());
    for (const EdgeProfile& p : profiles) {
        dataset_sizes.push_back(static_cast<int>(p.dataset_size));
    }

    world_ = build_world_sized(cfg_.seed, cfg_.n_layers, cfg_.d, cfg_.s, dataset_sizes,
                               cfg_.shift_scale, cfg_.noise_sigma, cfg_.non_iid_scale);
    eval_sets_ = draw_eval_datasets(cfg_.seed, world_.teacher, cfg_.d, cfg_.s, cfg_.n_clients,
                                    cfg_.eval_samples, cfg_.noise_sigma, cfg_.non_iid_scale);
    server_backbone_ = world_.backbone;

    const std::uint64_t backbone_params = static_cast<std::uint64_t>(cfg_.n_layers) *
                                          kSlotsPerLayer *
                                          static_cast<std::uint64_t>(cfg_.d) *
                                          static_cast<std::uint64_t>(cfg_.d);
    const std::uint64_t reserve = max_plan_reserve_bytes(cfg_.rank_menu, cfg_.n_layers, cfg_.d);
    std::vector<int> batches = allocate_batches(profiles, cfg_.b_min, cfg_.b_max);

    for (int i = 0; i < cfg_.n_clients; ++i) {
        const EdgeProfile& profile = profiles[static_cast<std::size_t>(i)];
        int bits = 0;
        try {
            bits = select_bits(profile, backbone_params, reserve);
        } catch (const InfeasibleMemoryError&) {
            excluded_.push_back(i);
            continue;
        }
        ClientState client;
        client.profile = profile;
        client.batch = batches[static_cast<std::size_t>(i)];
        client.bits = bits;
        client.backbone.reserve(server_backbone_.size());
        for (const AttentionBlock& block : server_backbone_) {
            AttentionBlock local = block;
            for (int m = 0; m < kSlotsPerLayer; ++m) {
                Matrix& w = local.weight(static_cast<WeightSlot>(m));
                w = quantizers_.round_trip(w, bits);
            }
            client.backbone.push_back(std::move(local));
        }
        clients_.push_back(std::move(client));
    }
    if (clients_.empty()) {
        throw ConfigError("no client fits its memory budget; nothing to train");
    }
    for (const ClientState& client : clients_) {
        eval_weight_total_ += client.profile.dataset_size;
    }
}

void Campaign::run_local(int t, ClientState& client, LocalOutcome& outcome) const {
    const int cid = client.profile.client_id;
    std::vector<ScoredSlot> scores;
    scores.reserve(static_cast<std::size_t>(cfg_.n_layers) * kSlotsPerLayer);
    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            const SlotRef slot{layer, static_cast<WeightSlot>(m)};
            const auto it = client.next_scores.find(slot);
            scores.push_back(ScoredSlot{slot, it == client.next_scores.end() ? 0.0 : it->second});
        }
    }

    outcome.plan =
        cfg_.planner_mode.kind == PlannerMode::Kind::Fedpipe
            ? plan_adapters(client.profile, client.batch, scores, cfg_.rank_menu, cfg_.d, cfg_.s)
            : plan_fixed_rank(client.profile, client.batch, scores, cfg_.rank_menu, cfg_.d,
                              cfg_.s, cfg_.planner_mode.rank);

    client.adapters.clear();
    if (outcome.plan.selections.empty()) {
        outcome.steps_completed = 0;
        outcome.flagged = false;
        outcome.wall_seconds = 0.0;
    } else {
        const double step_seconds =
            static_cast<double>(client.batch) *
            (outcome.plan.flops_per_sample +
             backbone_flops_per_sample(cfg_.n_layers, cfg_.d, cfg_.s)) /
            client.profile.compute_budget;
        const double required = static_cast<double>(cfg_.local_steps) * step_seconds;
        outcome.wall_seconds = required;
        outcome.flagged = required > cfg_.deadline_seconds;
        outcome.steps_completed =
            outcome.flagged
                ? std::min(cfg_.local_steps,
                           static_cast<int>(std::floor(cfg_.deadline_seconds / step_seconds)))
                : cfg_.local_steps;

        Rng init_rng(derive_seed(cfg_.seed, {kAdapterInit, static_cast<std::uint64_t>(t),
                                             static_cast<std::uint64_t>(cid)}));
        for (const Selection& sel : outcome.plan.selections) {
            client.adapters.push_back(make_adapter(sel.slot, cfg_.d, cfg_.d, sel.rank, init_rng));
        }
    }

    // Local Adam steps; the last step's gradients feed the importance update.
    const std::size_t n_adapters = client.adapters.size();
    std::vector<std::pair<Matrix, Matrix>> last_grads(n_adapters);
    for (std::size_t i = 0; i < n_adapters; ++i) {
        last_grads[i].first =
            Matrix::Zero(client.adapters[i].B.rows(), client.adapters[i].B.cols());
        last_grads[i].second =
            Matrix::Zero(client.adapters[i].A.rows(), client.adapters[i].A.cols());
    }
    if (outcome.steps_completed > 0) {
        const ClientDataset& dataset = world_.datasets[static_cast<std::size_t>(cid)];
        std::vector<AdamState> adam_b(n_adapters), adam_a(n_adapters);
        AdamConfig adam_cfg;
        adam_cfg.learning_rate = cfg_.learning_rate;
        for (int step = 0; step < outcome.steps_completed; ++step) {
            Rng batch_rng(derive_seed(cfg_.seed, {kBatchDraw, static_cast<std::uint64_t>(t),
                                                  static_cast<std::uint64_t>(cid),
                                                  static_cast<std::uint64_t>(step)}));
            std::vector<Matrix> inputs, targets;
            inputs.reserve(static_cast<std::size_t>(client.batch));
            targets.reserve(static_cast<std::size_t>(client.batch));
            for (int b = 0; b < client.batch; ++b) {
                const auto idx = static_cast<std::size_t>(batch_rng.integer(dataset.size()));
                inputs.push_back(dataset.inputs[idx]);
                targets.push_back(dataset.targets[idx]);
            }
            Tape tape;
            const LossGraph graph =
                forward_loss(client.backbone, client.adapters, inputs, targets, tape);
            std::vector<Tape::NodeId> params;
            params.reserve(2 * n_adapters);
            for (const auto& [b_leaf, a_leaf] : graph.adapter_leaves) {
                params.push_back(b_leaf);
                params.push_back(a_leaf);
            }
            std::vector<Matrix> grads = gradient_of_loss(tape, graph.loss, params);
            for (std::size_t i = 0; i < n_adapters; ++i) {
                adam_step(client.adapters[i].B, grads[2 * i], adam_b[i], adam_cfg);
                adam_step(client.adapters[i].A, grads[2 * i + 1], adam_a[i], adam_cfg);
            }
            if (step == outcome.steps_completed - 1) {
                for (std::size_t i = 0; i < n_adapters; ++i) {
                    last_grads[i].first = std::move(grads[2 * i]);
                    last_grads[i].second = std::move(grads[2 * i + 1]);
                }
            }
        }
    }

    // Importance refresh for every candidate slot, from the trained factors
    // before any reinitialization. Slots without an adapter decay with zero
    // sensitivity.
    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            const SlotRef slot{layer, static_cast<WeightSlot>(m)};
            SensitivityState& state = client.sensitivity[slot];
            const LoraAdapter* adapter = nullptr;
            std::size_t adapter_index = 0;
            for (std::size_t i = 0; i < n_adapters; ++i) {
                if (client.adapters[i].target == slot) {
                    adapter = &client.adapters[i];
                    adapter_index = i;
                    break;
                }
            }
            double value = 0.0;
            if (adapter != nullptr) {
                value = score(*adapter, state, last_grads[adapter_index].first,
                              last_grads[adapter_index].second, cfg_.lambda1, cfg_.lambda2)
                            .value;
            } else {
                state = update_sensitivity(state, 0.0, cfg_.lambda1, cfg_.lambda2);
                value = state.smoothed * state.uncertainty;
            }
            client.next_scores[slot] = value;
        }
    }

    if (!outcome.flagged && !outcome.plan.selections.empty()) {
        outcome.deltas.reserve(n_adapters);
        for (const LoraAdapter& adapter : client.adapters) {
            outcome.deltas.push_back(preprocess_delta(adapter));
        }
        // 16-bit transfer accounting for B and A entries.
        outcome.uploaded_bytes = trainable_param_count(client.adapters) * 2;
    }
}

RoundReport Campaign::run_round(int t) {
    if (t < 0) {
        throw ParameterError("run_round: round index must be >= 0");
    }

    // Participant selection (all clients unless a sampling fraction is set).
    std::vector<std::size_t> participants(clients_.size());
    for (std::size_t i = 0; i < participants.size(); ++i) {
        participants[i] = i;
    }
    if (cfg_.sample_fraction < 1.0) {
        const auto k = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(cfg_.sample_fraction * static_cast<double>(clients_.size()))));
        Rng rng(derive_seed(cfg_.seed, {kClientSample, static_cast<std::uint64_t>(t)}));
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + rng.integer(participants.size() - i);
            std::swap(participants[i], participants[j]);
        }
        participants.resize(k);
        std::sort(participants.begin(), participants.end());
    }

    std::vector<LocalOutcome> outcomes(participants.size());
    parallel_for(participants.size(), threads_, [&](std::size_t p) {
        outcomes[p].client_index = static_cast<int>(participants[p]);
        run_local(t, clients_[participants[p]], outcomes[p]);
    });

    RoundReport report;
    report.t = t;
    report.participants = static_cast<int>(participants.size());
    for (const LocalOutcome& outcome : outcomes) {
        if (outcome.flagged) {
            ++report.flagged;
        }
        report.bytes_up += outcome.uploaded_bytes;
    }
    report.under_training_rate =
        static_cast<double>(report.flagged) / static_cast<double>(report.participants);

    // Aggregation barrier: per slot, over included clients in client order.
    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            const SlotRef slot{layer, static_cast<WeightSlot>(m)};
            std::vector<std::pair<int, Matrix>> deltas;
            std::vector<long> sizes;
            std::vector<int> batches;
            for (const LocalOutcome& outcome : outcomes) {
                if (outcome.flagged || outcome.deltas.empty()) {
                    continue;
                }
                for (std::size_t s = 0; s < outcome.plan.selections.size(); ++s) {
                    if (outcome.plan.selections[s].slot == slot) {
                        const ClientState& client =
                            clients_[static_cast<std::size_t>(outcome.client_index)];
                        deltas.emplace_back(client.profile.client_id, outcome.deltas[s]);
                        sizes.push_back(client.profile.dataset_size);
                        batches.push_back(client.batch);
                        break;
                    }
                }
            }
            auto aggregate = aggregate_slot(deltas, sizes, batches, cfg_.aggregation_weighting);
            if (!aggregate) {
                continue;
            }
            server_backbone_[static_cast<std::size_t>(layer)].weight(
                static_cast<WeightSlot>(m)) += aggregate->delta;
            for (ClientState& client : clients_) {
                Rng reinit_rng(derive_seed(
                    cfg_.seed,
                    {kReinit, static_cast<std::uint64_t>(t),
                     static_cast<std::uint64_t>(client.profile.client_id),
                     static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(m)}));
                apply_update(client, slot, aggregate->delta, quantizers_, reinit_rng);
            }
            report.aggregates.push_back(SlotAggregateRecord{slot, std::move(aggregate->weights)});
        }
    }

    report.eval_loss = evaluate_global_loss();

    report.clients.reserve(outcomes.size());
    for (const LocalOutcome& outcome : outcomes) {
        const ClientState& client = clients_[static_cast<std::size_t>(outcome.client_index)];
        ClientRoundRecord record;
        record.client_id = client.profile.client_id;
        record.plan = outcome.plan;
        record.bits = client.bits;
        record.steps_planned = cfg_.local_steps;
        record.steps_completed = outcome.steps_completed;
        record.wall_seconds = outcome.wall_seconds;
        record.included = !outcome.flagged;
        record.uploaded_bytes = outcome.uploaded_bytes;
        report.clients.push_back(std::move(record));
    }
    return report;
}

double Campaign::evaluate_global_loss() const {
    double loss = 0.0;
    for (const ClientState& client : clients_) {
        const ClientDataset& eval =
            eval_sets_[static_cast<std::size_t>(client.profile.client_id)];
        double client_loss = 0.0;
        for (std::size_t n = 0; n < eval.size(); ++n) {
            client_loss += sample_mse(server_backbone_, eval.inputs[n], eval.targets[n]);
        }
        client_loss /= static_cast<double>(eval.size());
        loss += (static_cast<double>(client.profile.dataset_size) /
                 static_cast<double>(eval_weight_total_)) *
                client_loss;
    }
    return loss;
}

CampaignResult run_campaign(const CampaignConfig& cfg) {
    Campaign campaign(cfg);
    CampaignResult result;
    result.excluded_clients = campaign.excluded_clients();
    result.rounds.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int t = 0; t < cfg.rounds; ++t) {
        result.rounds.push_back(campaign.run_round(t));
    }
    for (const ClientState& client : campaign.clients()) {
        CampaignResult::ClientSummary summary;
        summary.client_id = client.profile.client_id;
        summary.batch = client.batch;
        summary.bits = client.bits;
        for (const ClientRoundRecord& record : result.rounds.front().clients) {
            if (record.client_id == client.profile.client_id) {
                for (const Selection& sel : record.plan.selections) {
                    summary.round0_trainable_params +=
                        static_cast<std::uint64_t>(sel.rank) *
                        static_cast<std::uint64_t>(2 * cfg.d);
                }
                break;
            }
        }
        result.clients.push_back(summary);
    }
    return result;
}

}  // namespace fedpipe
