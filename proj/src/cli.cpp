// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "fedpipe/quantizer.hpp"

namespace fedpipe {

using nlohmann::ordered_json;

namespace {

ordered_json selections_json(const AdapterPlan& plan) {
    ordered_json out = ordered_json::array();
    for (const Selection& sel : plan.selections) {
        out.push_back({{"layer", sel.slot.layer},
                       {"slot", std::string(slot_name(sel.slot.slot))},
                       {"rank", sel.rank}});
    }
    return out;
}

struct PlannedClient {
    EdgeProfile profile;
    int batch = 0;
    int bits = 0;
    AdapterPlan plan;
};

struct PlanPreview {
    std::vector<PlannedClient> clients;
    std::vector<int> excluded;
};

// Round-0 plans need no world: bootstrap importance scores are all zero.
PlanPreview preview_plans(const CampaignConfig& cfg) {
    PlanPreview preview;
    const std::vector<EdgeProfile> profiles = resolve_profiles(cfg);
    const std::vector<int> batches = allocate_batches(profiles, cfg.b_min, cfg.b_max);
    const std::uint64_t backbone_params = static_cast<std::uint64_t>(cfg.n_layers) *
                                          kSlotsPerLayer * static_cast<std::uint64_t>(cfg.d) *
                                          static_cast<std::uint64_t>(cfg.d);
    const std::uint64_t reserve = max_plan_reserve_bytes(cfg.rank_menu, cfg.n_layers, cfg.d);

    std::vector<ScoredSlot> scores;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            scores.push_back(ScoredSlot{SlotRef{layer, static_cast<WeightSlot>(m)}, 0.0});
        }
    }
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const EdgeProfile& profile = profiles[i];
        int bits = 0;
        try {
            bits = select_bits(profile, backbone_params, reserve);
        } catch (const InfeasibleMemoryError&) {
            preview.excluded.push_back(profile.client_id);
            continue;
        }
        PlannedClient client;
        client.profile = profile;
        client.batch = batches[i];
        client.bits = bits;
        client.plan =
            cfg.planner_mode.kind == PlannerMode::Kind::Fedpipe
                ? plan_adapters(profile, batches[i], scores, cfg.rank_menu, cfg.d, cfg.s)
                : plan_fixed_rank(profile, batches[i], scores, cfg.rank_menu, cfg.d, cfg.s,
                                  cfg.planner_mode.rank);
        preview.clients.push_back(std::move(client));
    }
    return preview;
}

}  // namespace

std::string round_report_json(const RoundReport& report) {
    ordered_json line;
    line["schema"] = "fedpipe.round.v1";
    line["t"] = report.t;
    line["eval_loss"] = report.eval_loss;
    line["utr"] = report.under_training_rate;
    line["flagged"] = report.flagged;
    line["participants"] = report.participants;
    line["bytes_up"] = report.bytes_up;
    ordered_json clients = ordered_json::array();
    for (const ClientRoundRecord& record : report.clients) {
        clients.push_back({{"client_id", record.client_id},
                           {"included", record.included},
                           {"batch", record.plan.batch},
                           {"bits", record.bits},
                           {"steps_completed", record.steps_completed},
                           {"steps_planned", record.steps_planned},
                           {"wall_seconds", record.wall_seconds},
                           {"uploaded_bytes", record.uploaded_bytes},
                           {"flops_per_sample", record.plan.flops_per_sample},
                           {"residual_budget", record.plan.residual_budget},
                           {"selections", selections_json(record.plan)}});
    }
    line["clients"] = clients;
    ordered_json aggregates = ordered_json::array();
    for (const SlotAggregateRecord& record : report.aggregates) {
        ordered_json weights = ordered_json::array();
        for (const auto& [client_id, weight] : record.weights) {
            weights.push_back({{"client_id", client_id}, {"weight", weight}});
        }
        aggregates.push_back({{"layer", record.slot.layer},
                              {"slot", std::string(slot_name(record.slot.slot))},
                              {"weights", weights}});
    }
    line["aggregates"] = aggregates;
    return line.dump();
}

std::string summary_json(const CampaignResult& result) {
    ordered_json summary;
    summary["schema"] = "fedpipe.summary.v1";
    summary["rounds"] = result.rounds.size();
    summary["round0_loss"] = result.rounds.empty() ? 0.0 : result.rounds.front().eval_loss;
    summary["final_loss"] = result.rounds.empty() ? 0.0 : result.rounds.back().eval_loss;
    double utr_sum = 0.0;
    std::uint64_t bytes = 0;
    for (const RoundReport& round : result.rounds) {
        utr_sum += round.under_training_rate;
        bytes += round.bytes_up;
    }
    summary["mean_utr"] =
        result.rounds.empty() ? 0.0 : utr_sum / static_cast<double>(result.rounds.size());
    summary["total_bytes_up"] = bytes;
    ordered_json clients = ordered_json::array();
    for (const CampaignResult::ClientSummary& client : result.clients) {
        clients.push_back({{"client_id", client.client_id},
                           {"batch", client.batch},
                           {"bits", client.bits},
                           {"trainable_params", client.round0_trainable_params}});
    }
    summary["clients"] = clients;
    ordered_json excluded = ordered_json::array();
    for (int client_id : result.excluded_clients) {
        excluded.push_back({{"client_id", client_id}, {"reason", "memory-infeasible"}});
    }
    summary["excluded_clients"] = excluded;
    return summary.dump(2) + "\n";
}

std::string plan_json(const CampaignConfig& cfg) {
    const PlanPreview preview = preview_plans(cfg);
    ordered_json root;
    root["schema"] = "fedpipe.plan.v1";
    ordered_json clients = ordered_json::array();
    for (const PlannedClient& client : preview.clients) {
        clients.push_back({{"client_id", client.profile.client_id},
                           {"batch", client.batch},
                           {"bits", client.bits},
                           {"flops_per_sample", client.plan.flops_per_sample},
                           {"residual_budget", client.plan.residual_budget},
                           {"selections", selections_json(client.plan)}});
    }
    root["clients"] = clients;
    ordered_json excluded = ordered_json::array();
    for (int client_id : preview.excluded) {
        excluded.push_back({{"client_id", client_id}, {"reason", "memory-infeasible"}});
    }
    root["excluded_clients"] = excluded;
    return root.dump(2) + "\n";
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override,
            std::optional<std::string> out_dir) {
    try {
        CampaignConfig cfg = load_config_file(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
        }
        if (out_dir) {
            cfg.output_dir = *out_dir;
        }
        const CampaignResult result = run_campaign(cfg);

        std::filesystem::create_directories(cfg.output_dir);
        const std::filesystem::path dir(cfg.output_dir);
        {
            std::ofstream rounds(dir / "rounds.jsonl", std::ios::binary);
            if (!rounds) {
                throw Error("cannot write " + (dir / "rounds.jsonl").string());
            }
            for (const RoundReport& report : result.rounds) {
                rounds << round_report_json(report) << "\n";
            }
        }
        {
            std::ofstream summary(dir / "summary.json", std::ios::binary);
            if (!summary) {
                throw Error("cannot write " + (dir / "summary.json").string());
            }
            summary << summary_json(result);
        }
        std::cout << "wrote " << (dir / "rounds.jsonl").string() << " ("
                  << result.rounds.size() << " rounds) and " << (dir / "summary.json").string()
                  << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_plan(const std::string& config_path) {
    try {
        const CampaignConfig cfg = load_config_file(config_path);
        const PlanPreview preview = preview_plans(cfg);

        std::printf("%-8s %-6s %-5s %-16s %-16s %s\n", "client", "batch", "bits", "flops/sample",
                    "residual", "selections");
        for (const PlannedClient& client : preview.clients) {
            std::string selections;
            for (const Selection& sel : client.plan.selections) {
                if (!selections.empty()) {
                    selections += " ";
                }
                selections += "L" + std::to_string(sel.slot.layer) + "." +
                              std::string(slot_name(sel.slot.slot)) + ":r" +
                              std::to_string(sel.rank);
            }
            if (selections.empty()) {
                selections = "(none)";
            }
            std::printf("%-8d %-6d %-5d %-16.1f %-16.1f %s\n", client.profile.client_id,
                        client.batch, client.bits, client.plan.flops_per_sample,
                        client.plan.residual_budget, selections.c_str());
        }
        for (int client_id : preview.excluded) {
            std::printf("%-8d excluded: memory-infeasible\n", client_id);
        }
        std::cout << plan_json(cfg);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_dump_codebook(int bits) {
    try {
        const NfCodebook book = build_codebook(bits);
        for (double code : book.codes) {
            std::printf("%.12g\n", code);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fedpipe
