// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "fedpipe/planner.hpp"

using namespace fedpipe;

namespace {

RankMenu uniform_menu(std::vector<int> ranks) {
    RankMenu menu;
    for (auto& slot : menu.per_slot) {
        slot = ranks;
    }
    return menu;
}

std::vector<ScoredSlot> layer0_scores(std::vector<double> values) {
    std::vector<ScoredSlot> scores;
    for (std::size_t m = 0; m < values.size(); ++m) {
        scores.push_back(ScoredSlot{SlotRef{0, static_cast<WeightSlot>(m)}, values[m]});
    }
    return scores;
}

// Independent cost recomputation for the oracle checks.
double oracle_cost(const std::vector<Selection>& selections, int d, int s) {
    double total = 0.0;
    for (const Selection& sel : selections) {
        total += 6.0 * s * sel.rank * (2 * d);
    }
    return total;
}

bool oracle_feasible(const std::vector<Selection>& selections, int batch, double c_max, int d,
                     int s) {
    return static_cast<double>(batch) * oracle_cost(selections, d, s) <= c_max;
}

// Maximality oracle: no selected slot's rank can be raised to the next menu
// value and no skipped slot can be added at its minimum rank.
void check_greedy_maximality(const AdapterPlan& plan, const std::vector<ScoredSlot>& scores,
                             const RankMenu& menu, double c_max, int d, int s) {
    REQUIRE(oracle_feasible(plan.selections, plan.batch, c_max, d, s));
    std::set<std::pair<int, int>> selected;
    for (std::size_t i = 0; i < plan.selections.size(); ++i) {
        const Selection& sel = plan.selections[i];
        selected.insert({sel.slot.layer, static_cast<int>(sel.slot.slot)});
        const auto& ranks = menu.ranks(sel.slot.slot);
        const auto pos = std::find(ranks.begin(), ranks.end(), sel.rank);
        REQUIRE(pos != ranks.end());
        if (pos != ranks.begin()) {
            std::vector<Selection> raised = plan.selections;
            raised[i].rank = *(pos - 1);
            CHECK_FALSE(oracle_feasible(raised, plan.batch, c_max, d, s));
        }
    }
    for (const ScoredSlot& candidate : scores) {
        if (selected.count({candidate.slot.layer, static_cast<int>(candidate.slot.slot)})) {
            continue;
        }
        std::vector<Selection> extended = plan.selections;
        extended.push_back(Selection{candidate.slot, menu.ranks(candidate.slot.slot).back()});
        CHECK_FALSE(oracle_feasible(extended, plan.batch, c_max, d, s));
    }
}

}  // namespace

TEST_SUITE("planner") {

TEST_CASE("batch allocation from compute ratios") {
    std::vector<EdgeProfile> profiles{{0, 20e12, 1e9, 100}, {1, 40e12, 1e9, 100}};
    CHECK(allocate_batches(profiles, 2, 8) == std::vector<int>{4, 8});

    std::vector<EdgeProfile> equal{{0, 5e9, 1e9, 10}, {1, 5e9, 1e9, 10}, {2, 5e9, 1e9, 10}};
    CHECK(allocate_batches(equal, 2, 8) == std::vector<int>{8, 8, 8});

    std::vector<EdgeProfile> skewed{{0, 1.0, 1e9, 10}, {1, 1000.0, 1e9, 10}};
    CHECK(allocate_batches(skewed, 2, 8) == std::vector<int>{2, 8});

    CHECK_THROWS_AS(allocate_batches(std::vector<EdgeProfile>{}, 2, 8), ParameterError);
    std::vector<EdgeProfile> zero{{0, 0.0, 1e9, 10}};
    CHECK_THROWS_AS(allocate_batches(zero, 2, 8), ParameterError);
}

TEST_CASE("flops cost formula and additivity") {
    std::vector<Selection> one{{SlotRef{0, WeightSlot::Query}, 2}};
    CHECK(flops_cost(one, 16, 8) == 3072.0);
    CHECK(flops_cost(std::vector<Selection>{}, 16, 8) == 0.0);

    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 4 + static_cast<int>(rng.integer(28));
        const int s = 1 + static_cast<int>(rng.integer(16));
        std::vector<Selection> s1, s2;
        for (int i = 0; i < 3; ++i) {
            s1.push_back(Selection{SlotRef{i, WeightSlot::Query},
                                   1 + static_cast<int>(rng.integer(4))});
            s2.push_back(Selection{SlotRef{i, WeightSlot::Value},
                                   1 + static_cast<int>(rng.integer(4))});
        }
        std::vector<Selection> both = s1;
        both.insert(both.end(), s2.begin(), s2.end());
        CHECK(flops_cost(both, d, s) == flops_cost(s1, d, s) + flops_cost(s2, d, s));
    }
}

TEST_CASE("greedy plan: unconstrained, starved, and the worked example") {
    const RankMenu menu = uniform_menu({4, 2, 1});
    const auto scores = layer0_scores({4.0, 3.0, 2.0, 1.0});

    SUBCASE("budget beyond every slot at max rank selects everything") {
        const EdgeProfile profile{0, 1e12, 1e9, 100};
        const AdapterPlan plan = plan_adapters(profile, 8, scores, menu, 16, 8);
        REQUIRE(plan.selections.size() == 4);
        for (const Selection& sel : plan.selections) {
            CHECK(sel.rank == 4);
        }
    }
    SUBCASE("vanishing budget selects nothing") {
        const EdgeProfile profile{0, 1e-9, 1e9, 100};
        const AdapterPlan plan = plan_adapters(profile, 1, scores, menu, 16, 8);
        CHECK(plan.selections.empty());
        CHECK(plan.flops_per_sample == 0.0);
    }
    SUBCASE("per-sample budget 7680 gives rank 4 then rank 1") {
        // Slot costs at d=16, s=8 are 1536 * r.
        const EdgeProfile profile{0, 7680.0, 1e9, 100};
        const AdapterPlan plan = plan_adapters(profile, 1, scores, menu, 16, 8);
        REQUIRE(plan.selections.size() == 2);
        CHECK(plan.selections[0].slot.slot == WeightSlot::Query);
        CHECK(plan.selections[0].rank == 4);
        CHECK(plan.selections[1].slot.slot == WeightSlot::Key);
        CHECK(plan.selections[1].rank == 1);
        CHECK(plan.flops_per_sample == 7680.0);
        CHECK(plan.residual_budget == 0.0);
        check_greedy_maximality(plan, scores, menu, profile.compute_budget, 16, 8);
    }
}

TEST_CASE("fuzzed budget safety over 1000 instances") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 4 + static_cast<int>(rng.integer(29));
        const int s = 1 + static_cast<int>(rng.integer(12));
        const int n_layers = 1 + static_cast<int>(rng.integer(3));
        const int batch = 1 + static_cast<int>(rng.integer(8));

        RankMenu menu;
        for (auto& ranks : menu.per_slot) {
            std::set<int> pool;
            const int count = 1 + static_cast<int>(rng.integer(4));
            while (static_cast<int>(pool.size()) < count) {
                pool.insert(1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(d))));
            }
            ranks.assign(pool.rbegin(), pool.rend());
        }
        std::vector<ScoredSlot> scores;
        for (int layer = 0; layer < n_layers; ++layer) {
            for (int m = 0; m < kSlotsPerLayer; ++m) {
                scores.push_back(ScoredSlot{SlotRef{layer, static_cast<WeightSlot>(m)},
                                            std::abs(rng.gaussian())});
            }
        }
        const EdgeProfile profile{0, rng.uniform_in(1.0, 4e6), 1e9, 100};
        const AdapterPlan plan = plan_adapters(profile, batch, scores, menu, d, s);
        CHECK(static_cast<double>(batch) * oracle_cost(plan.selections, d, s) <=
              profile.compute_budget);
    }
}

TEST_CASE("greedy maximality on exhaustively-checkable instances") {
    Rng rng(78);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = 4 + static_cast<int>(rng.integer(13));
        const int s = 1 + static_cast<int>(rng.integer(8));
        const int batch = 1 + static_cast<int>(rng.integer(4));
        RankMenu menu;
        for (auto& ranks : menu.per_slot) {
            std::set<int> pool;
            const int count = 1 + static_cast<int>(rng.integer(4));
            while (static_cast<int>(pool.size()) < count) {
                pool.insert(1 + static_cast<int>(rng.integer(4)));
            }
            ranks.assign(pool.rbegin(), pool.rend());
        }
        const auto scores = layer0_scores({std::abs(rng.gaussian()), std::abs(rng.gaussian()),
                                           std::abs(rng.gaussian()), std::abs(rng.gaussian())});
        const EdgeProfile profile{0, rng.uniform_in(1.0, 3e5), 1e9, 100};
        const AdapterPlan plan = plan_adapters(profile, batch, scores, menu, d, s);
        check_greedy_maximality(plan, scores, menu, profile.compute_budget, d, s);
    }
}

TEST_CASE("priority respect and monotonicity in the budget") {
    Rng rng(79);
    const RankMenu menu = uniform_menu({4, 2, 1});
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 8;
        const int s = 4;
        const auto scores = layer0_scores({std::abs(rng.gaussian()), std::abs(rng.gaussian()),
                                           std::abs(rng.gaussian()), std::abs(rng.gaussian())});
        const double c_small = rng.uniform_in(1.0, 2e4);
        const double c_large = c_small * rng.uniform_in(1.0, 3.0);
        const EdgeProfile small{0, c_small, 1e9, 100};
        const EdgeProfile large{0, c_large, 1e9, 100};
        const AdapterPlan plan_small = plan_adapters(small, 2, scores, menu, d, s);
        const AdapterPlan plan_large = plan_adapters(large, 2, scores, menu, d, s);

        auto slot_set = [](const AdapterPlan& plan) {
            std::set<int> out;
            for (const Selection& sel : plan.selections) {
                out.insert(static_cast<int>(sel.slot.slot));
            }
            return out;
        };
        const auto small_set = slot_set(plan_small);
        const auto large_set = slot_set(plan_large);
        for (int slot : small_set) {
            CHECK(large_set.count(slot) == 1);  // monotonicity
        }

        // Priority: a higher-scored slot that fits alone at min rank is never
        // skipped while a lower-scored one is selected.
        const double min_cost = 6.0 * s * 1 * (2 * d);
        for (const ScoredSlot& hi : scores) {
            for (const ScoredSlot& lo : scores) {
                if (hi.score <= lo.score) {
                    continue;
                }
                const bool hi_fits_alone = 2.0 * min_cost <= c_small;
                const bool hi_in = small_set.count(static_cast<int>(hi.slot.slot)) == 1;
                const bool lo_in = small_set.count(static_cast<int>(lo.slot.slot)) == 1;
                if (hi_fits_alone && lo_in) {
                    CHECK(hi_in);
                }
            }
        }
    }
}

TEST_CASE("bit selection against the memory budget") {
    const EdgeProfile roomy{0, 1e9, 0.6e9, 100};
    CHECK(select_bits(roomy, 100'000'000, 0) == 32);

    const EdgeProfile mid{0, 1e9, 0.3e9, 100};
    CHECK(select_bits(mid, 100'000'000, 0) == 16);

    const EdgeProfile tight{0, 1e9, 0.04e9, 100};
    CHECK_THROWS_AS(select_bits(tight, 100'000'000, 0), InfeasibleMemoryError);

    // The reserve shifts the boundary.
    const EdgeProfile exact{0, 1e9, 0.41e9, 100};
    CHECK(select_bits(exact, 100'000'000, 0) == 32);
    CHECK(select_bits(exact, 100'000'000, 20'000'000) == 16);

    CHECK_THROWS_AS(select_bits(roomy, 0, 0), ParameterError);
}

TEST_CASE("reserve bytes for the maximal plan") {
    const RankMenu menu = uniform_menu({4, 2, 1});
    // 2 layers * 4 slots * rank 4 * 2d entries * 24 bytes.
    CHECK(max_plan_reserve_bytes(menu, 2, 16) ==
          static_cast<std::uint64_t>(2) * 4 * 4 * 32 * 24);
}

TEST_CASE("fixed-rank baseline ignores the budget") {
    const RankMenu menu = uniform_menu({4, 2, 1});
    const auto scores = layer0_scores({1.0, 2.0, 3.0, 4.0});
    const EdgeProfile profile{0, 10.0, 1e9, 100};  // far below any plan cost
    const AdapterPlan plan = plan_fixed_rank(profile, 2, scores, menu, 16, 8);
    REQUIRE(plan.selections.size() == 4);
    for (const Selection& sel : plan.selections) {
        CHECK(sel.rank == 4);
    }
    CHECK(plan.residual_budget < 0.0);

    const AdapterPlan forced = plan_fixed_rank(profile, 2, scores, menu, 16, 8, 2);
    for (const Selection& sel : forced.selections) {
        CHECK(sel.rank == 2);
    }
}

}  // TEST_SUITE
