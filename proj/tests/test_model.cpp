// Copyright (c) 2026 fedpipe-sim contributors
// SPDX-License-Identifier: Apache-2.0
//
#include <doctest.h>

#include <cstring>
#include <vector>

#include "fedpipe/model.hpp"
#include "oracles.hpp"

using namespace fedpipe;

namespace {

bool bits_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(),
                       sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

double loss_of(const std::vector<AttentionBlock>& backbone,
               const std::vector<LoraAdapter>& adapters, const std::vector<Matrix>& inputs,
               const std::vector<Matrix>& targets) {
    Tape tape;
    const LossGraph graph = forward_loss(backbone, adapters, inputs, targets, tape);
    return tape.value(graph.loss)(0, 0);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero shift and zero noise make the backbone a perfect model") {
    const World world = build_world(3, 2, 8, 4, 2, 8, 0.0, 0.0);
    for (const ClientDataset& ds : world.datasets) {
        const double loss = loss_of(world.backbone, {}, ds.inputs, ds.targets);
        CHECK(loss == 0.0);
    }
}

TEST_CASE("same seed gives bit-identical worlds") {
    const World w1 = build_world(17, 2, 8, 4, 3, 8, 0.1, 0.05);
    const World w2 = build_world(17, 2, 8, 4, 3, 8, 0.1, 0.05);
    for (std::size_t l = 0; l < w1.backbone.size(); ++l) {
        for (int m = 0; m < kSlotsPerLayer; ++m) {
            CHECK(bits_equal(w1.backbone[l].weight(static_cast<WeightSlot>(m)),
                             w2.backbone[l].weight(static_cast<WeightSlot>(m))));
            CHECK(bits_equal(w1.teacher[l].weight(static_cast<WeightSlot>(m)),
                             w2.teacher[l].weight(static_cast<WeightSlot>(m))));
        }
    }
    for (std::size_t c = 0; c < w1.datasets.size(); ++c) {
        for (std::size_t n = 0; n < w1.datasets[c].size(); ++n) {
            CHECK(bits_equal(w1.datasets[c].inputs[n], w2.datasets[c].inputs[n]));
            CHECK(bits_equal(w1.datasets[c].targets[n], w2.datasets[c].targets[n]));
        }
    }
    const World w3 = build_world(18, 2, 8, 4, 3, 8, 0.1, 0.05);
    CHECK_FALSE(bits_equal(w1.backbone[0].wq, w3.backbone[0].wq));
}

TEST_CASE("noise-only targets give mean per-element loss near sigma^2") {
    const double sigma = 0.1;
    const World world = build_world(11, 1, 8, 4, 1, 1000, 0.0, sigma);
    const double loss =
        loss_of(world.backbone, {}, world.datasets[0].inputs, world.datasets[0].targets);
    CHECK(loss > 0.01 * 0.8);
    CHECK(loss < 0.01 * 1.2);
}

TEST_CASE("forward_loss edge cases") {
    const World world = build_world(5, 2, 8, 4, 1, 8, 0.2, 0.0);
    const auto& ds = world.datasets[0];

    SUBCASE("zero-B adapter leaves the loss unchanged") {
        Rng rng(1);
        LoraAdapter adapter = make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 2, rng);
        const double with = loss_of(world.backbone, {adapter}, ds.inputs, ds.targets);
        const double without = loss_of(world.backbone, {}, ds.inputs, ds.targets);
        CHECK(with == without);
    }
    SUBCASE("duplicate adapter on one slot is rejected") {
        Rng rng(1);
        std::vector<LoraAdapter> adapters{
            make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 2, rng),
            make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 1, rng)};
        Tape tape;
        CHECK_THROWS_AS(forward_loss(world.backbone, adapters, ds.inputs, ds.targets, tape),
                        ConfigError);
    }
    SUBCASE("adapter on a missing layer is rejected") {
        Rng rng(1);
        std::vector<LoraAdapter> adapters{
            make_adapter(SlotRef{5, WeightSlot::Query}, 8, 8, 2, rng)};
        Tape tape;
        CHECK_THROWS_AS(forward_loss(world.backbone, adapters, ds.inputs, ds.targets, tape),
                        ConfigError);
    }
}

TEST_CASE("forward_loss matches the straight-line oracle") {
    Rng rng(23);
    const World world = build_world(23, 1, 8, 4, 1, 6, 0.3, 0.1);
    std::vector<LoraAdapter> adapters;
    adapters.push_back(make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 2, rng));
    adapters.push_back(make_adapter(SlotRef{0, WeightSlot::Output}, 8, 8, 3, rng));
    adapters[0].B = rng.gaussian_matrix(8, 2, 0.4);
    adapters[1].B = rng.gaussian_matrix(8, 3, 0.4);

    const auto& ds = world.datasets[0];
    const double tape_loss = loss_of(world.backbone, adapters, ds.inputs, ds.targets);
    const double oracle = oracles::attention_mse(world.backbone, adapters, ds.inputs, ds.targets);
    CHECK(std::abs(tape_loss - oracle) <= 1e-12);

    const World deep = build_world(29, 3, 8, 4, 1, 4, 0.3, 0.1);
    std::vector<LoraAdapter> deep_adapters;
    deep_adapters.push_back(make_adapter(SlotRef{1, WeightSlot::Key}, 8, 8, 2, rng));
    deep_adapters.push_back(make_adapter(SlotRef{2, WeightSlot::Value}, 8, 8, 2, rng));
    deep_adapters[0].B = rng.gaussian_matrix(8, 2, 0.4);
    deep_adapters[1].B = rng.gaussian_matrix(8, 2, 0.4);
    const auto& deep_ds = deep.datasets[0];
    const double deep_loss =
        loss_of(deep.backbone, deep_adapters, deep_ds.inputs, deep_ds.targets);
    const double deep_oracle =
        oracles::attention_mse(deep.backbone, deep_adapters, deep_ds.inputs, deep_ds.targets);
    CHECK(std::abs(deep_loss - deep_oracle) <= 1e-12);
}

TEST_CASE("adapter linearity: adapted forward equals merged-backbone forward") {
    Rng rng(31);
    const World world = build_world(31, 2, 8, 4, 1, 5, 0.2, 0.0);
    LoraAdapter adapter = make_adapter(SlotRef{1, WeightSlot::Value}, 8, 8, 3, rng);
    adapter.B = rng.gaussian_matrix(8, 3, 0.5);

    std::vector<AttentionBlock> merged = world.backbone;
    merged[1].wv += adapter.B * adapter.A;

    const auto& ds = world.datasets[0];
    const double adapted = loss_of(world.backbone, {adapter}, ds.inputs, ds.targets);
    const double direct = loss_of(merged, {}, ds.inputs, ds.targets);
    CHECK(std::abs(adapted - direct) <= 1e-12);
}

TEST_CASE("loss is nonnegative and zero only at exact fit") {
    Rng rng(37);
    const Matrix x = rng.gaussian_matrix(4, 8);
    const World world = build_world(37, 1, 8, 4, 1, 5, 0.5, 0.1);
    const Matrix y = attention_forward(world.backbone, x);

    std::vector<Matrix> inputs{x};
    std::vector<Matrix> exact{y};
    CHECK(loss_of(world.backbone, {}, inputs, exact) == 0.0);

    std::vector<Matrix> off{y + Matrix::Constant(4, 8, 1e-3)};
    CHECK(loss_of(world.backbone, {}, inputs, off) > 0.0);
}

TEST_CASE("trainable parameter counts") {
    Rng rng(2);
    std::vector<LoraAdapter> adapters{
        make_adapter(SlotRef{0, WeightSlot::Query}, 1024, 1024, 8, rng)};
    CHECK(trainable_param_count(adapters) == 16384);
    CHECK(trainable_param_count(std::vector<LoraAdapter>{}) == 0);
    std::vector<LoraAdapter> two{make_adapter(SlotRef{0, WeightSlot::Query}, 16, 16, 2, rng),
                                 make_adapter(SlotRef{0, WeightSlot::Key}, 16, 16, 2, rng)};
    CHECK(trainable_param_count(two) == 128);
}

TEST_CASE("one Adam step on a nonzero gradient strictly changes the adapter") {
    Rng rng(41);
    const World world = build_world(41, 1, 8, 4, 1, 8, 0.4, 0.0);
    LoraAdapter adapter = make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 2, rng);
    const Matrix b_before = adapter.B;
    const Matrix a_before = adapter.A;

    const auto& ds = world.datasets[0];
    Tape tape;
    const std::vector<LoraAdapter> adapters{adapter};
    const LossGraph graph = forward_loss(world.backbone, adapters, ds.inputs, ds.targets, tape);
    std::vector<Tape::NodeId> params{graph.adapter_leaves[0].first,
                                     graph.adapter_leaves[0].second};
    auto grads = gradient_of_loss(tape, graph.loss, params);
    CHECK(grads[0].cwiseAbs().maxCoeff() > 0.0);   // dL/dB = G A^T is nonzero
    CHECK(grads[1].cwiseAbs().maxCoeff() == 0.0);  // dL/dA = B^T G is zero while B = 0

    AdamState state_b, state_a;
    const AdamConfig cfg;
    adam_step(adapter.B, grads[0], state_b, cfg);
    adam_step(adapter.A, grads[1], state_a, cfg);
    CHECK((adapter.B - b_before).cwiseAbs().maxCoeff() > 0.0);
    CHECK(bits_equal(adapter.A, a_before));
}

TEST_CASE("make_adapter validates the rank") {
    Rng rng(3);
    CHECK_THROWS_AS(make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 0, rng), ParameterError);
    CHECK_THROWS_AS(make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 9, rng), ParameterError);
    const LoraAdapter adapter = make_adapter(SlotRef{0, WeightSlot::Query}, 8, 8, 4, rng);
    CHECK(adapter.B.cwiseAbs().maxCoeff() == 0.0);
    CHECK(adapter.delta().cwiseAbs().maxCoeff() == 0.0);
}

}  // TEST_SUITE
