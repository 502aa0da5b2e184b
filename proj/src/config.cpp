// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include "fedpipe/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace fedpipe {

using nlohmann::ordered_json;

RankMenu default_rank_menu() {
    RankMenu menu;
    for (auto& ranks : menu.per_slot) {
        ranks = {4, 2, 1};
    }
    return menu;
}

namespace {

// Stream tag for profile sampling; shared determinism contract with the
// federation streams.
constexpr std::uint64_t kProfileStream = 6;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
    throw ConfigError("config field '" + field + "': " + what);
}

void reject_unknown(const ordered_json& obj, const std::string& scope,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* name : allowed) {
            if (key == name) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown config key '" + (scope.empty() ? key : scope + "." + key) +
                              "'");
        }
    }
}

template <typename T>
T get_field(const ordered_json& obj, const std::string& scope, const char* key, T fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const std::string path = scope.empty() ? key : scope + "." + key;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(path, "has the wrong type");
    }
}

template <typename T>
T require_field(const ordered_json& obj, const std::string& scope, const char* key) {
    const std::string path = scope.empty() ? key : scope + "." + key;
    if (!obj.contains(key)) {
        fail(path, "is required");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(path, "has the wrong type");
    }
}

std::vector<int> rank_list(const ordered_json& obj, const char* key,
                           const std::vector<int>& fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
        fail(std::string("rank_menu.") + key, "must be an array of integers");
    }
}

}  // namespace

std::string planner_mode_string(const PlannerMode& mode) {
    if (mode.kind == PlannerMode::Kind::Fedpipe) {
        return "fedpipe";
    }
    return mode.rank > 0 ? "fixed_rank:" + std::to_string(mode.rank) : "fixed_rank:max";
}

PlannerMode parse_planner_mode(const std::string& text) {
    if (text == "fedpipe") {
        return PlannerMode{PlannerMode::Kind::Fedpipe, 0};
    }
    constexpr std::string_view prefix = "fixed_rank:";
    if (text.starts_with(prefix)) {
        const std::string arg = text.substr(prefix.size());
        if (arg == "max") {
            return PlannerMode{PlannerMode::Kind::FixedRank, 0};
        }
        try {
            const int rank = std::stoi(arg);
            if (rank >= 1) {
                return PlannerMode{PlannerMode::Kind::FixedRank, rank};
            }
        } catch (const std::exception&) {
        }
    }
    fail("planner", "must be 'fedpipe', 'fixed_rank:max', or 'fixed_rank:<rank >= 1>'");
}

CampaignConfig parse_config(const std::string& text) {
    ordered_json root;
    try {
        root = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    reject_unknown(root, "",
                   {"seed", "n_clients", "model", "data", "rounds", "local_steps",
                    "deadline_seconds", "batch", "rank_menu", "smoothing", "learning_rate",
                    "profiles", "profile_sampler", "planner", "aggregation_weighting",
                    "block_size", "sample_fraction", "output_dir"});

    CampaignConfig cfg;
    cfg.rank_menu = default_rank_menu();
    cfg.seed = require_field<std::uint64_t>(root, "", "seed");
    cfg.n_clients = require_field<int>(root, "", "n_clients");

    if (root.contains("model")) {
        const auto& model = root.at("model");
        reject_unknown(model, "model", {"layers", "d", "s"});
        cfg.n_layers = get_field<int>(model, "model", "layers", cfg.n_layers);
        cfg.d = get_field<int>(model, "model", "d", cfg.d);
        cfg.s = get_field<int>(model, "model", "s", cfg.s);
    }
    if (root.contains("data")) {
        const auto& data = root.at("data");
        reject_unknown(data, "data",
                       {"samples_per_client", "shift_scale", "noise_sigma", "non_iid_scale",
                        "eval_samples"});
        cfg.samples_per_client =
            get_field<int>(data, "data", "samples_per_client", cfg.samples_per_client);
        cfg.shift_scale = get_field<double>(data, "data", "shift_scale", cfg.shift_scale);
        cfg.noise_sigma = get_field<double>(data, "data", "noise_sigma", cfg.noise_sigma);
        cfg.non_iid_scale = get_field<double>(data, "data", "non_iid_scale", cfg.non_iid_scale);
        cfg.eval_samples = get_field<int>(data, "data", "eval_samples", cfg.eval_samples);
    }
    cfg.rounds = get_field<int>(root, "", "rounds", cfg.rounds);
    cfg.local_steps = get_field<int>(root, "", "local_steps", cfg.local_steps);
    cfg.deadline_seconds = get_field<double>(root, "", "deadline_seconds", cfg.deadline_seconds);
    if (root.contains("batch")) {
        const auto& batch = root.at("batch");
        reject_unknown(batch, "batch", {"min", "max"});
        cfg.b_min = get_field<int>(batch, "batch", "min", cfg.b_min);
        cfg.b_max = get_field<int>(batch, "batch", "max", cfg.b_max);
    }
    if (root.contains("rank_menu")) {
        const auto& menu = root.at("rank_menu");
        reject_unknown(menu, "rank_menu", {"q", "k", "v", "o"});
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            auto& ranks = cfg.rank_menu.per_slot[static_cast<std::size_t>(m)];
            ranks = rank_list(menu, std::string(slot_name(static_cast<WeightSlot>(m))).c_str(),
                              ranks);
        }
    }
    if (root.contains("smoothing")) {
        const auto& smoothing = root.at("smoothing");
        reject_unknown(smoothing, "smoothing", {"lambda1", "lambda2"});
        cfg.lambda1 = get_field<double>(smoothing, "smoothing", "lambda1", cfg.lambda1);
        cfg.lambda2 = get_field<double>(smoothing, "smoothing", "lambda2", cfg.lambda2);
    }
    cfg.learning_rate = get_field<double>(root, "", "learning_rate", cfg.learning_rate);

    if (root.contains("profiles")) {
        const auto& profiles = root.at("profiles");
        if (!profiles.is_array()) {
            fail("profiles", "must be an array");
        }
        for (std::size_t i = 0; i < profiles.size(); ++i) {
            const auto& p = profiles.at(i);
            const std::string scope = "profiles[" + std::to_string(i) + "]";
            reject_unknown(p, scope, {"c_max", "m_max", "dataset_size"});
            ProfileSpec spec;
            spec.c_max = require_field<double>(p, scope, "c_max");
            spec.m_max = require_field<double>(p, scope, "m_max");
            spec.dataset_size = get_field<long>(p, scope, "dataset_size",
                                                static_cast<long>(cfg.samples_per_client));
            cfg.profiles.push_back(spec);
        }
    }
    if (root.contains("profile_sampler")) {
        const auto& sampler = root.at("profile_sampler");
        reject_unknown(sampler, "profile_sampler", {"c_max", "m_max", "dataset_size"});
        ProfileSampler ps;
        ps.c_max = require_field<std::array<double, 2>>(sampler, "profile_sampler", "c_max");
        ps.m_max = require_field<std::array<double, 2>>(sampler, "profile_sampler", "m_max");
        if (sampler.contains("dataset_size")) {
            ps.dataset_size =
                require_field<std::array<long, 2>>(sampler, "profile_sampler", "dataset_size");
        } else {
            ps.dataset_size = {static_cast<long>(cfg.samples_per_client),
                               static_cast<long>(cfg.samples_per_client)};
        }
        cfg.profile_sampler = ps;
    }

    if (root.contains("planner")) {
        cfg.planner_mode = parse_planner_mode(require_field<std::string>(root, "", "planner"));
    }
    if (root.contains("aggregation_weighting")) {
        const auto mode = require_field<std::string>(root, "", "aggregation_weighting");
        if (mode == "paper") {
            cfg.aggregation_weighting = AggregationWeighting::Paper;
        } else if (mode == "datasize") {
            cfg.aggregation_weighting = AggregationWeighting::DataSize;
        } else {
            fail("aggregation_weighting", "must be 'paper' or 'datasize'");
        }
    }
    cfg.block_size = get_field<int>(root, "", "block_size", cfg.block_size);
    cfg.sample_fraction = get_field<double>(root, "", "sample_fraction", cfg.sample_fraction);
    cfg.output_dir = get_field<std::string>(root, "", "output_dir", cfg.output_dir);

    validate_config(cfg);
    return cfg;
}

CampaignConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

void validate_config(const CampaignConfig& cfg) {
    if (cfg.n_clients < 1) {
        fail("n_clients", "must be >= 1");
    }
    if (cfg.n_layers < 1) {
        fail("model.layers", "must be >= 1");
    }
    if (cfg.d < 4) {
        fail("model.d", "must be >= 4");
    }
    if (cfg.s < 1) {
        fail("model.s", "must be >= 1");
    }
    if (cfg.rounds < 1) {
        fail("rounds", "must be >= 1");
    }
    if (cfg.local_steps < 1) {
        fail("local_steps", "must be >= 1");
    }
    if (!(cfg.deadline_seconds > 0.0)) {
        fail("deadline_seconds", "must be positive");
    }
    if (cfg.b_min < 1) {
        fail("batch.min", "must be >= 1");
    }
    if (cfg.b_min > cfg.b_max) {
        fail("batch.min", "exceeds batch.max (" + std::to_string(cfg.b_min) + " > " +
                              std::to_string(cfg.b_max) + ")");
    }
    if (cfg.samples_per_client < cfg.b_max) {
        fail("data.samples_per_client", "must be >= batch.max");
    }
    if (cfg.eval_samples < 1) {
        fail("data.eval_samples", "must be >= 1");
    }
    if (!(cfg.shift_scale >= 0.0)) {
        fail("data.shift_scale", "must be >= 0");
    }
    if (!(cfg.noise_sigma >= 0.0)) {
        fail("data.noise_sigma", "must be >= 0");
    }
    if (!(cfg.non_iid_scale >= 0.0)) {
        fail("data.non_iid_scale", "must be >= 0");
    }
    try {
        cfg.rank_menu.validate();
    } catch (const ParameterError& e) {
        fail("rank_menu", e.what());
    }
    for (int m = 0; m < kSlotsPerLayer; ++m) {
        if (cfg.rank_menu.max_rank(static_cast<WeightSlot>(m)) > cfg.d) {
            fail(std::string("rank_menu.") + std::string(slot_name(static_cast<WeightSlot>(m))),
                 "maximum rank exceeds model.d");
        }
    }
    if (!(cfg.lambda1 > 0.0 && cfg.lambda1 < 1.0)) {
        fail("smoothing.lambda1", "must lie in (0, 1)");
    }
    if (!(cfg.lambda2 > 0.0 && cfg.lambda2 < 1.0)) {
        fail("smoothing.lambda2", "must lie in (0, 1)");
    }
    if (!(cfg.learning_rate > 0.0)) {
        fail("learning_rate", "must be positive");
    }
    if (!cfg.profiles.empty() && cfg.profile_sampler.has_value()) {
        fail("profiles", "cannot be combined with profile_sampler");
    }
    if (!cfg.profiles.empty() &&
        cfg.profiles.size() != static_cast<std::size_t>(cfg.n_clients)) {
        fail("profiles", "count (" + std::to_string(cfg.profiles.size()) +
                             ") must equal n_clients (" + std::to_string(cfg.n_clients) + ")");
    }
    for (std::size_t i = 0; i < cfg.profiles.size(); ++i) {
        const ProfileSpec& p = cfg.profiles[i];
        const std::string scope = "profiles[" + std::to_string(i) + "]";
        if (!(p.c_max > 0.0)) {
            fail(scope + ".c_max", "must be positive");
        }
        if (!(p.m_max > 0.0)) {
            fail(scope + ".m_max", "must be positive");
        }
        if (p.dataset_size < cfg.b_max) {
            fail(scope + ".dataset_size", "must be >= batch.max");
        }
    }
    if (cfg.profile_sampler) {
        const ProfileSampler& ps = *cfg.profile_sampler;
        if (!(ps.c_max[0] > 0.0) || ps.c_max[0] > ps.c_max[1]) {
            fail("profile_sampler.c_max", "must be a positive [lo, hi] range");
        }
        if (!(ps.m_max[0] > 0.0) || ps.m_max[0] > ps.m_max[1]) {
            fail("profile_sampler.m_max", "must be a positive [lo, hi] range");
        }
        if (ps.dataset_size[0] < cfg.b_max || ps.dataset_size[0] > ps.dataset_size[1]) {
            fail("profile_sampler.dataset_size", "must be a [lo, hi] range with lo >= batch.max");
        }
    }
    if (cfg.planner_mode.kind == PlannerMode::Kind::FixedRank && cfg.planner_mode.rank > cfg.d) {
        fail("planner", "fixed rank exceeds model.d");
    }
    if (cfg.block_size < 1) {
        fail("block_size", "must be >= 1");
    }
    if (!(cfg.sample_fraction > 0.0 && cfg.sample_fraction <= 1.0)) {
        fail("sample_fraction", "must lie in (0, 1]");
    }
    if (cfg.output_dir.empty()) {
        fail("output_dir", "must not be empty");
    }
}

std::string serialize_config(const CampaignConfig& cfg) {
    ordered_json root;
    root["seed"] = cfg.seed;
    root["n_clients"] = cfg.n_clients;
    root["model"] = {{"layers", cfg.n_layers}, {"d", cfg.d}, {"s", cfg.s}};
    root["data"] = {{"samples_per_client", cfg.samples_per_client},
                    {"shift_scale", cfg.shift_scale},
                    {"noise_sigma", cfg.noise_sigma},
                    {"non_iid_scale", cfg.non_iid_scale},
                    {"eval_samples", cfg.eval_samples}};
    root["rounds"] = cfg.rounds;
    root["local_steps"] = cfg.local_steps;
    root["deadline_seconds"] = cfg.deadline_seconds;
    root["batch"] = {{"min", cfg.b_min}, {"max", cfg.b_max}};
    ordered_json menu;
    for (int m = 0; m < kSlotsPerLayer; ++m) {
        menu[std::string(slot_name(static_cast<WeightSlot>(m)))] =
            cfg.rank_menu.per_slot[static_cast<std::size_t>(m)];
    }
    root["rank_menu"] = menu;
    root["smoothing"] = {{"lambda1", cfg.lambda1}, {"lambda2", cfg.lambda2}};
    root["learning_rate"] = cfg.learning_rate;
    if (!cfg.profiles.empty()) {
        ordered_json profiles = ordered_json::array();
        for (const ProfileSpec& p : cfg.profiles) {
            profiles.push_back({{"c_max", p.c_max},
                                {"m_max", p.m_max},
                                {"dataset_size", p.dataset_size}});
        }
        root["profiles"] = profiles;
    }
    if (cfg.profile_sampler) {
        root["profile_sampler"] = {{"c_max", cfg.profile_sampler->c_max},
                                   {"m_max", cfg.profile_sampler->m_max},
                                   {"dataset_size", cfg.profile_sampler->dataset_size}};
    }
    root["planner"] = planner_mode_string(cfg.planner_mode);
    root["aggregation_weighting"] =
        cfg.aggregation_weighting == AggregationWeighting::Paper ? "paper" : "datasize";
    root["block_size"] = cfg.block_size;
    root["sample_fraction"] = cfg.sample_fraction;
    root["output_dir"] = cfg.output_dir;
    return root.dump(2) + "\n";
}

std::vector<EdgeProfile> resolve_profiles(const CampaignConfig& cfg) {
    std::vector<EdgeProfile> profiles;
    profiles.reserve(static_cast<std::size_t>(cfg.n_clients));
    if (!cfg.profiles.empty()) {
        for (int i = 0; i < cfg.n_clients; ++i) {
            const ProfileSpec& spec = cfg.profiles[static_cast<std::size_t>(i)];
            profiles.push_back(EdgeProfile{i, spec.c_max, spec.m_max, spec.dataset_size});
        }
        return profiles;
    }
    if (cfg.profile_sampler) {
        const ProfileSampler& ps = *cfg.profile_sampler;
        Rng rng(derive_seed(cfg.seed, {kProfileStream}));
        for (int i = 0; i < cfg.n_clients; ++i) {
            EdgeProfile p;
            p.client_id = i;
            p.compute_budget = rng.uniform_in(ps.c_max[0], ps.c_max[1]);
            p.memory_budget = rng.uniform_in(ps.m_max[0], ps.m_max[1]);
            const auto span =
                static_cast<std::uint64_t>(ps.dataset_size[1] - ps.dataset_size[0] + 1);
            p.dataset_size = ps.dataset_size[0] + static_cast<long>(rng.integer(span));
            profiles.push_back(p);
        }
        return profiles;
    }
    for (int i = 0; i < cfg.n_clients; ++i) {
        profiles.push_back(EdgeProfile{i, 1e9, 1e9, static_cast<long>(cfg.samples_per_client)});
    }
    return profiles;
}

}  // namespace fedpipe
