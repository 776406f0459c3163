#include <catch2/catch_amalgamated.hpp>

#include "c2fs/run_config.hpp"

using namespace c2fs;

TEST_CASE("config defaults apply and seed is mandatory") {
    auto cfg = RunConfig::from_string("seed = 42\n");
    REQUIRE(cfg.seed == 42);
    REQUIRE(cfg.epochs == 30);
    REQUIRE(cfg.knn_k == 10);
    REQUIRE(cfg.round_m == 20);
    REQUIRE(cfg.target_n == 100);
    REQUIRE(cfg.queries_per_class == 15);
    REQUIRE(cfg.episodes == 1000);

    REQUIRE_THROWS_AS(RunConfig::from_string("[data]\nmode = vector\n"), ConfigError);
}

TEST_CASE("unknown keys are rejected and named") {
    try {
        RunConfig::from_string("seed = 1\n[training]\nalhpa = 1.0\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("training.alhpa") != std::string::npos);
    }
    REQUIRE_THROWS_AS(RunConfig::from_string("seed = 1\n[typo_section]\nx = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(RunConfig::from_string("seed = 1\nseed = 2\n"), ConfigError);
}

TEST_CASE("values parse with sections, comments and lists") {
    const std::string text = R"(
seed = 9  # master seed

[data]
mode = vector
coarse_count = 2
fine_per_coarse = 3,2
ambient_dim = 12

[training]
epochs = 4
lr_schedule = 2:0.1,3:0.5
alpha = 2.5
beta = 2.5

[calibration]
coarse_source = true
head = prototype

[evaluation]
way = 5
)";
    auto cfg = RunConfig::from_string(text);
    REQUIRE(cfg.seed == 9);
    REQUIRE(cfg.fine_per_coarse == std::vector<int>{3, 2});
    REQUIRE(cfg.lr_schedule.size() == 2);
    REQUIRE(cfg.lr_schedule[1].epoch == 3);
    REQUIRE(cfg.lr_schedule[1].multiplier == 0.5);
    REQUIRE(cfg.alpha == 2.5);
    REQUIRE(cfg.calibration_config().coarse_source == CoarseSource::TrueLabel);
    REQUIRE(cfg.calibration_config().head == FineHead::NearestPrototype);
    REQUIRE(cfg.way == 5);

    auto hierarchy = cfg.synth_config().hierarchy;
    REQUIRE(hierarchy.coarse_count == 2);
    REQUIRE(hierarchy.fine_count() == 5);
}

TEST_CASE("single fine_per_coarse entry expands uniformly") {
    auto cfg = RunConfig::from_string("seed = 1\n[data]\ncoarse_count = 5\nfine_per_coarse = 2\n");
    REQUIRE(cfg.fine_per_coarse == std::vector<int>(5, 2));
    REQUIRE_THROWS_AS(
        RunConfig::from_string("seed = 1\n[data]\ncoarse_count = 3\nfine_per_coarse = 1,2\n"),
        ConfigError);
}

TEST_CASE("bad values name the key") {
    try {
        RunConfig::from_string("seed = 1\n[training]\nepochs = soon\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("training.epochs") != std::string::npos);
    }
    REQUIRE_THROWS_AS(RunConfig::from_string("seed = 1\n[training]\nenable_cont = maybe\n"),
                      ConfigError);
    REQUIRE_THROWS_AS(RunConfig::from_string("seed = 1\n[calibration]\ncoarse_source = vote\n"),
                      ConfigError);
}

TEST_CASE("resolved text round-trips to the same configuration") {
    const std::string text = R"(
seed = 77
[data]
mode = vector
coarse_count = 3
fine_per_coarse = 2
[training]
epochs = 12
initial_lr = 0.02
[evaluation]
episodes = 250
)";
    auto cfg = RunConfig::from_string(text);
    auto echoed = RunConfig::from_string(cfg.resolved_text());
    REQUIRE(echoed.seed == cfg.seed);
    REQUIRE(echoed.epochs == cfg.epochs);
    REQUIRE(echoed.initial_lr == cfg.initial_lr);
    REQUIRE(echoed.episodes == cfg.episodes);
    REQUIRE(echoed.fine_per_coarse == cfg.fine_per_coarse);
    REQUIRE(echoed.resolved_text() == cfg.resolved_text());
}
