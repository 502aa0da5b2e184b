// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include <CLI11.hpp>
#include <cstdint>
#include <optional>
#include <string>

#include "fedpipe/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Deterministic federated LoRA fine-tuning simulator"};
    app.require_subcommand(1);

    std::string run_config;
    std::optional<std::uint64_t> run_seed;
    std::optional<std::string> run_out;
    CLI::App* run = app.add_subcommand("run", "Execute a campaign and write metrics");
    run->add_option("--config", run_config, "Campaign config (JSON)")->required();
    run->add_option("--seed", run_seed, "Override the config seed");
    run->add_option("--out", run_out, "Override the output directory");

    std::string plan_config;
    CLI::App* plan = app.add_subcommand("plan", "Print round-0 plans without training");
    plan->add_option("--config", plan_config, "Campaign config (JSON)")->required();

    int bits = 4;
    CLI::App* dump = app.add_subcommand("dump-codebook", "Print NormalFloat code values");
    dump->add_option("--bits", bits, "Bit width (1, 2, 3, 4, or 8)")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        return fedpipe::cmd_run(run_config, run_seed, run_out);
    }
    if (plan->parsed()) {
        return fedpipe::cmd_plan(plan_config);
    }
    return fedpipe::cmd_dump_codebook(bits);
}
