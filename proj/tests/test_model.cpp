#include <catch2/catch_amalgamated.hpp>

#include "c2fs/model.hpp"
#include "c2fs/rng.hpp"
#include "gradcheck.hpp"

using namespace c2fs;

namespace {

EncoderConfig image_config() {
    EncoderConfig cfg;
    cfg.input_shape = {3, 32, 32};
    cfg.stage_channels = {8, 8, 8, 8};
    cfg.embedding_dim = 12;
    cfg.projector_dim = 8;
    cfg.decoder_width = 8;
    return cfg;
}

EncoderConfig vector_config() {
    EncoderConfig cfg;
    cfg.input_shape = {10};
    cfg.stage_channels = {16, 16, 12, 8};
    cfg.embedding_dim = 6;
    cfg.projector_dim = 6;
    cfg.decoder_width = 16;
    return cfg;
}

template <typename S>
Tensor<S> random_batch(const Shape& input_shape, std::size_t n, Rng& rng) {
    Shape s{n};
    s.insert(s.end(), input_shape.begin(), input_shape.end());
    Tensor<S> t(s);
    for (auto& v : t.data) v = static_cast<S>(rng.uniform());
    return t;
}

} // namespace

TEST_CASE("image stage features halve spatially: 32 -> 16,8,4,2") {
    auto m = make_model<float>(image_config(), 4, 0.999, 1);
    Rng rng(2);
    auto batch = random_batch<float>(m.cfg.input_shape, 2, rng);
    auto pack = encode(m, batch);
    REQUIRE(pack.stages[0].shape() == Shape{2, 8, 16, 16});
    REQUIRE(pack.stages[1].shape() == Shape{2, 8, 8, 8});
    REQUIRE(pack.stages[2].shape() == Shape{2, 8, 4, 4});
    REQUIRE(pack.stages[3].shape() == Shape{2, 8, 2, 2});
    REQUIRE(pack.fq.shape() == Shape{2, 12});
    REQUIRE(pack.projected.shape() == Shape{2, 8});
}

TEST_CASE("embedding dimension follows the configured d") {
    auto cfg = vector_config();
    cfg.embedding_dim = 640;
    auto m = make_model<float>(cfg, 3, 0.999, 1);
    Rng rng(3);
    auto pack = encode(m, random_batch<float>(cfg.input_shape, 1, rng));
    REQUIRE(pack.fq.shape() == Shape{1, 640});
}

TEST_CASE("zero parameters and zero input give all-zero features") {
    auto m = make_model<float>(vector_config(), 3, 0.999, 1);
    for (auto& p : m.trainable)
        for (auto& v : p.value().data) v = 0.0f;
    Tensor<float> zero({2, 10});
    auto pack = encode(m, zero);
    for (const auto& stage : pack.stages)
        for (float v : stage.value().data) REQUIRE(v == 0.0f);
    for (float v : pack.fq.value().data) REQUIRE(v == 0.0f);
    for (float v : pack.projected.value().data) REQUIRE(v == 0.0f);
}

TEST_CASE("encode is pure: identical calls are bit-identical") {
    auto m = make_model<float>(image_config(), 4, 0.999, 5);
    Rng rng(6);
    auto batch = random_batch<float>(m.cfg.input_shape, 2, rng);
    auto a = encode(m, batch);
    auto b = encode(m, batch);
    REQUIRE(a.fq.value().data == b.fq.value().data);
    REQUIRE(a.projected.value().data == b.projected.value().data);
}

TEST_CASE("reconstruction output matches input shape in both modes") {
    Rng rng(7);
    {
        auto m = make_model<float>(image_config(), 4, 0.999, 1);
        auto batch = random_batch<float>(m.cfg.input_shape, 2, rng);
        auto out = reconstruct(m, encode(m, batch));
        REQUIRE(out.shape() == Shape{2, 3, 32, 32});
    }
    {
        auto m = make_model<float>(vector_config(), 4, 0.999, 1);
        auto batch = random_batch<float>(m.cfg.input_shape, 3, rng);
        auto out = reconstruct(m, encode(m, batch));
        REQUIRE(out.shape() == Shape{3, 10});
    }
}

TEST_CASE("decoder consumes every feature source: perturbing f1 changes output") {
    auto m = make_model<float>(image_config(), 4, 0.999, 9);
    Rng rng(10);
    auto batch = random_batch<float>(m.cfg.input_shape, 1, rng);
    auto pack = encode(m, batch);
    auto base = reconstruct(m, pack).value();

    auto perturbed = pack;
    Tensor<float> f1 = pack.stages[0].value();
    for (auto& v : f1.data) v += 0.1f;
    perturbed.stages[0] = make_constant(f1, "f1_perturbed");
    auto changed = reconstruct(m, perturbed).value();
    REQUIRE(base.data != changed.data);
}

TEST_CASE("reconstruction loss reaches stage-1 weights with nonzero gradient") {
    auto m = make_model<float>(image_config(), 4, 0.999, 11);
    Rng rng(12);
    auto batch = random_batch<float>(m.cfg.input_shape, 1, rng);
    auto pack = encode(m, batch);
    auto loss = ops::mse(reconstruct(m, pack), pack.input);
    backward(loss);
    const auto& g = m.enc_conv[0].w.grad();
    bool any_nonzero = false;
    for (float v : g.data) any_nonzero |= v != 0.0f;
    REQUIRE(any_nonzero);
}

TEST_CASE("rescaled features all share the reference shape of f4") {
    Rng rng(13);
    {
        auto m = make_model<float>(image_config(), 4, 0.999, 1);
        auto pack = encode(m, random_batch<float>(m.cfg.input_shape, 2, rng));
        auto z = rescale_all(m, pack);
        for (const auto& v : z) REQUIRE(v.shape() == Shape{2, 8, 2, 2});
        // R_4 is the identity adapter.
        REQUIRE(z[2].value().data == pack.stages[3].value().data);
    }
    {
        auto m = make_model<float>(vector_config(), 4, 0.999, 1);
        auto pack = encode(m, random_batch<float>(m.cfg.input_shape, 2, rng));
        auto z = rescale_all(m, pack);
        for (const auto& v : z) REQUIRE(v.shape() == Shape{2, 8});
    }
}

TEST_CASE("f^q maps to the reference shape through a single deconv") {
    auto m = make_model<float>(image_config(), 4, 0.999, 1);
    // (d -> c4, kernel = spatial size of f4); one layer, within the at-most-two
    // convolution/deconvolution budget.
    REQUIRE(m.rq.w.value().shape == Shape{12, 8, 2, 2});
}

TEST_CASE("momentum twin starts as an exact copy and ignores gradients") {
    auto m = make_model<float>(vector_config(), 4, 0.999, 21);
    REQUIRE(m.momentum.size() == m.ema_src.size());
    for (std::size_t i = 0; i < m.momentum.size(); ++i) {
        REQUIRE(m.momentum[i].value().data == m.ema_src[i].value().data);
        REQUIRE_FALSE(m.momentum[i].requires_grad());
    }

    // A loss through the momentum branch leaves its parameters gradient-free.
    Rng rng(22);
    auto batch = random_batch<float>(m.cfg.input_shape, 2, rng);
    auto pack = encode(m, batch, /*momentum=*/true);
    auto loss = ops::mse(pack.projected,
                         make_constant<float>(Tensor<float>::zeros(pack.projected.shape())));
    backward(loss);
    for (const auto& p : m.momentum)
        for (float g : p.grad().data) REQUIRE(g == 0.0f);
}

TEST_CASE("ema recurrence replays the trajectory") {
    auto m = make_model<float>(vector_config(), 4, 0.9, 23);
    std::vector<Tensor<float>> initial;
    for (const auto& p : m.momentum) initial.push_back(p.value());

    Rng rng(24);
    std::vector<std::vector<Tensor<float>>> trajectory;
    for (int step = 0; step < 5; ++step) {
        for (auto& p : m.ema_src)
            for (auto& v : p.value().data) v += static_cast<float>(rng.normal(0.0, 0.01));
        momentum_update(m);
        std::vector<Tensor<float>> snap;
        for (const auto& p : m.ema_src) snap.push_back(p.value());
        trajectory.push_back(std::move(snap));
    }

    // Replay oracle.
    for (std::size_t i = 0; i < initial.size(); ++i) {
        Tensor<float> replay = initial[i];
        for (const auto& snap : trajectory)
            for (std::size_t j = 0; j < replay.numel(); ++j)
                replay.data[j] = 0.9f * replay.data[j] + 0.1f * snap[i].data[j];
        for (std::size_t j = 0; j < replay.numel(); ++j)
            REQUIRE_THAT(m.momentum[i].value().data[j],
                         Catch::Matchers::WithinAbs(replay.data[j], 1e-6));
    }
}

TEST_CASE("parameter count is stable per documented config") {
    // Vector config: stages 10->16->16->12->8, embed 8->6, projector 6->6->6->6,
    // classifier 6->4, cascade decoder (q: 6->16, fuses (8+16)->16, (12+16)->16,
    // (16+16)->16, (16+16)->16, out 16->10), adapters (16->8, 12->8, 6->8).
    auto m = make_model<float>(vector_config(), 4, 0.999, 1);
    const std::size_t expected = (10 * 16 + 16) + (16 * 16 + 16) + (16 * 12 + 12) +
                                 (12 * 8 + 8) + (8 * 6 + 6) + (6 * 6 + 6) + (6 * 6 + 6) +
                                 (6 * 6 + 6) + (6 * 4 + 4) + (6 * 16 + 16) + (24 * 16 + 16) +
                                 (28 * 16 + 16) + (32 * 16 + 16) + (32 * 16 + 16) +
                                 (16 * 10 + 10) + (16 * 8 + 8) + (12 * 8 + 8) + (6 * 8 + 8);
    REQUIRE(m.trainable_param_count() == expected);
}

TEST_CASE("encode rejects mismatched input shapes") {
    auto m = make_model<float>(image_config(), 4, 0.999, 1);
    Tensor<float> bad({2, 3, 16, 16});
    REQUIRE_THROWS_AS(encode(m, bad), ShapeError);
}

TEST_CASE("full composite loss through the vector model passes gradcheck") {
    // Eq. 5 with every branch active, in 64-bit mode.
    auto cfg = vector_config();
    cfg.stage_channels = {6, 6, 6, 6};
    cfg.embedding_dim = 4;
    cfg.projector_dim = 4;
    cfg.decoder_width = 6;
    cfg.input_shape = {5};
    auto m = make_model<double>(cfg, 3, 0.999, 31);
    Rng rng(32);
    Tensor<double> batch({2, 5});
    for (auto& v : batch.data) v = rng.normal();
    std::vector<int> labels{0, 2};

    auto fn = [&]() {
        auto pack = encode(m, batch);
        auto ce = ops::softmax_cross_entropy(coarse_logits(m, pack.projected), labels);
        auto rec = ops::mse(reconstruct(m, pack), pack.input);
        std::vector<Var<double>> terms;
        auto z = rescale_all(m, pack);
        terms.push_back(ce);
        terms.push_back(rec);
        terms.push_back(ops::squared_distance_batch_mean(z[0], z[3]));
        terms.push_back(ops::squared_distance_batch_mean(z[1], z[3]));
        terms.push_back(ops::squared_distance_batch_mean(z[2], z[3]));
        return ops::weighted_sum<double>(terms, {1.0, 1.0, 1.0, 1.0, 1.0});
    };
    auto res = gradcheck::check(fn, m.trainable);
    REQUIRE(res.max_rel_err < 1e-5);
}
