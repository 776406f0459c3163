#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "c2fs/checkpoint.hpp"
#include "c2fs/optim.hpp"
#include "c2fs/rng.hpp"

using namespace c2fs;

TEST_CASE("plain sgd step without momentum") {
    auto p = make_parameter<double>(Tensor<double>::scalar(1.0), "p");
    p.grad().data[0] = 2.0;
    SgdOptimizer<double> opt({p}, 0.1, 0.0);
    opt.step();
    REQUIRE_THAT(p.value().data[0], Catch::Matchers::WithinAbs(0.8, 1e-12));
    REQUIRE(p.grad().data[0] == 0.0); // gradients zeroed afterwards
}

TEST_CASE("momentum recurrence matches hand-unrolled oracle") {
    // Two steps, momentum 0.9, lr 1, grad 1 each: v1=1, v2=1.9, total = 2.9.
    auto p = make_parameter<double>(Tensor<double>::scalar(0.0), "p");
    SgdOptimizer<double> opt({p}, 1.0, 0.9);
    p.grad().data[0] = 1.0;
    opt.step();
    p.grad().data[0] = 1.0;
    opt.step();
    REQUIRE_THAT(p.value().data[0], Catch::Matchers::WithinAbs(-2.9, 1e-12));
}

TEST_CASE("schedule entry multiplies the learning rate at its epoch") {
    auto p = make_parameter<double>(Tensor<double>::scalar(0.0), "p");
    SgdOptimizer<double> opt({p}, 0.5, 0.0, {{140, 0.1}, {180, 0.1}});
    opt.apply_schedule(10);
    REQUIRE(opt.learning_rate() == 0.5);
    opt.apply_schedule(140);
    REQUIRE_THAT(opt.learning_rate(), Catch::Matchers::WithinAbs(0.05, 1e-12));
    opt.apply_schedule(180);
    REQUIRE_THAT(opt.learning_rate(), Catch::Matchers::WithinAbs(0.005, 1e-13));
}

TEST_CASE("non-finite gradient aborts the step naming the parameter") {
    auto p = make_parameter<double>(Tensor<double>::scalar(0.0), "enc.s1.fc.w");
    SgdOptimizer<double> opt({p}, 0.1, 0.0);
    p.grad().data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        opt.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("enc.s1.fc.w") != std::string::npos);
    }
}

TEST_CASE("ema boundary and direct values") {
    auto t = make_parameter<double>(Tensor<double>::scalar(0.0), "t");
    auto s = make_parameter<double>(Tensor<double>::scalar(1.0), "s");
    std::vector<Var<double>> target{t}, source{s};

    ema_update(target, source, 0.999);
    REQUIRE_THAT(t.value().data[0], Catch::Matchers::WithinAbs(0.001, 1e-15));

    t.value().data[0] = 0.0;
    ema_update(target, source, 0.0); // coeff 0: exact copy of source
    REQUIRE(t.value().data[0] == 1.0);

    t.value().data[0] = 0.5;
    ema_update(target, source, 1.0); // coeff 1: unchanged
    REQUIRE(t.value().data[0] == 0.5);

    auto bad = make_parameter<double>(Tensor<double>::zeros({2}), "bad");
    std::vector<Var<double>> bad_target{bad};
    REQUIRE_THROWS_AS(ema_update(bad_target, source, 0.5), ShapeError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Rng rng(31);
    auto a = make_parameter<float>(Tensor<float>({3, 4}), "layer.w");
    auto b = make_parameter<float>(Tensor<float>({4}), "layer.b");
    for (auto& v : a.value().data) v = static_cast<float>(rng.normal());
    for (auto& v : b.value().data) v = static_cast<float>(rng.normal());

    const std::string path = "ckpt_test.c2fsckpt";
    std::vector<Var<float>> params{a, b};
    save_checkpoint(path, params);

    auto entries = load_checkpoint(path);
    REQUIRE(entries.size() == 2);
    REQUIRE(entries[0].name == "layer.w");
    REQUIRE(entries[0].tensor.shape == Shape{3, 4});
    REQUIRE(entries[0].tensor.data == a.value().data);
    REQUIRE(entries[1].tensor.data == b.value().data);

    auto a2 = make_parameter<float>(Tensor<float>({3, 4}), "layer.w");
    auto b2 = make_parameter<float>(Tensor<float>({4}), "layer.b");
    std::vector<Var<float>> params2{a2, b2};
    load_checkpoint_into(path, params2);
    REQUIRE(a2.value().data == a.value().data);
    REQUIRE(b2.value().data == b.value().data);

    // Save -> load -> save produces identical files.
    const std::string path2 = "ckpt_test2.c2fsckpt";
    save_checkpoint(path2, params2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(c1 == c2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint loader reports missing parameters and shape mismatches") {
    auto a = make_parameter<float>(Tensor<float>({2}), "w");
    const std::string path = "ckpt_test3.c2fsckpt";
    std::vector<Var<float>> params{a};
    save_checkpoint(path, params);

    auto other = make_parameter<float>(Tensor<float>({2}), "missing");
    std::vector<Var<float>> wrong{other};
    REQUIRE_THROWS_AS(load_checkpoint_into(path, wrong), ValidationError);

    auto shaped = make_parameter<float>(Tensor<float>({3}), "w");
    std::vector<Var<float>> badshape{shaped};
    REQUIRE_THROWS_AS(load_checkpoint_into(path, badshape), ShapeError);
    std::remove(path.c_str());
}
