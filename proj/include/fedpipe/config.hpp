// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedpipe/planner.hpp"

namespace fedpipe {

struct ProfileSpec {
    double c_max = 0.0;
    double m_max = 0.0;
    long dataset_size = 0;
    friend bool operator==(const ProfileSpec&, const ProfileSpec&) = default;
};

/// Uniform ranges for drawing per-client profiles from the campaign seed.
struct ProfileSampler {
    std::array<double, 2> c_max{0.0, 0.0};
    std::array<double, 2> m_max{0.0, 0.0};
    std::array<long, 2> dataset_size{0, 0};
    friend bool operator==(const ProfileSampler&, const ProfileSampler&) = default;
};

struct PlannerMode {
    enum class Kind { Fedpipe, FixedRank };
    Kind kind = Kind::Fedpipe;
    int rank = 0;  // 0 = each slot's menu maximum
    friend bool operator==(const PlannerMode&, const PlannerMode&) = default;
};

enum class AggregationWeighting { Paper, DataSize };

struct CampaignConfig {
    std::uint64_t seed = 0;
    int n_clients = 0;

    // model
    int n_layers = 2;
    int d = 16;
    int s = 8;

    // data
    int samples_per_client = 64;
    double shift_scale = 0.1;
    double noise_sigma = 0.01;
    double non_iid_scale = 1.0;
    int eval_samples = 16;

    // schedule
    int rounds = 100;
    int local_steps = 5;
    double deadline_seconds = 1.0;
    int b_min = 2;
    int b_max = 8;

    RankMenu rank_menu;  // defaults to [4, 2, 1] per slot
    double lambda1 = 0.85;
    double lambda2 = 0.85;
    double learning_rate = 1e-3;

    std::vector<ProfileSpec> profiles;             // explicit, one per client
    std::optional<ProfileSampler> profile_sampler;

    PlannerMode planner_mode;
    AggregationWeighting aggregation_weighting = AggregationWeighting::Paper;
    int block_size = 64;
    double sample_fraction = 1.0;
    std::string output_dir = "out";

    friend bool operator==(const CampaignConfig&, const CampaignConfig&) = default;
};

/// Default rank menu: [4, 2, 1] for every slot.
RankMenu default_rank_menu();

/// Parses and fully validates a JSON campaign config; unknown keys are
/// rejected and every error names the offending field.
CampaignConfig parse_config(const std::string& text);

CampaignConfig load_config_file(const std::string& path);

/// Canonical JSON form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const CampaignConfig& config);

void validate_config(const CampaignConfig& config);

/// Explicit profiles, sampled profiles, or homogeneous defaults.
std::vector<EdgeProfile> resolve_profiles(const CampaignConfig& config);

std::string planner_mode_string(const PlannerMode& mode);
PlannerMode parse_planner_mode(const std::string& text);

}  // namespace fedpipe
