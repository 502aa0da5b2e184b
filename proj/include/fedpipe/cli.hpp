// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedpipe/federation.hpp"

namespace fedpipe {

/// Runs the campaign described by the config file and writes rounds.jsonl
/// plus summary.json into the output directory. Returns the process exit
/// status.
int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override,
            std::optional<std::string> out_dir);

/// Prints each client's round-0 plan (batch, slots, ranks, per-sample FLOPs,
/// bits) as a table and as JSON; no training occurs.
int cmd_plan(const std::string& config_path);

/// Prints the k-bit NormalFloat code values, one per line, 12 significant
/// digits.
int cmd_dump_codebook(int bits);

/// One rounds.jsonl line (schema fedpipe.round.v1).
std::string round_report_json(const RoundReport& report);

/// summary.json contents (schema fedpipe.summary.v1).
std::string summary_json(const CampaignResult& result);

/// Round-0 plan description (schema fedpipe.plan.v1) for cmd_plan.
std::string plan_json(const CampaignConfig& cfg);

}  // namespace fedpipe
