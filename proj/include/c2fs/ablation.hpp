#pragma once

#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "c2fs/episodes.hpp"
#include "c2fs/model.hpp"
#include "c2fs/probe.hpp"
#include "c2fs/repository.hpp"
#include "c2fs/synth.hpp"
#include "c2fs/trainer.hpp"

namespace c2fs {

// Paired-seed benchmark driver behind the `ablate` subcommand and the
// directional reproductions. Every row shares the data, the model init, the
// training seed and the episode stream; rows differ only in the toggled
// component.

struct BenchmarkConfig {
    SynthConfig data;
    std::size_t train_per_fine = 60;
    std::size_t test_per_fine = 40;
    EncoderConfig arch;
    TrainConfig train;
    std::uint64_t model_seed = 1;
    int way = -1; // all-way
    int shot = 1;
    int queries_per_class = 15;
    int episodes = 500;
    std::uint64_t eval_seed = 99;
    CalibrationConfig calib;
};

struct AblationRow {
    std::string name;
    bool rec = false;
    bool align = false;
    bool cd = false;
    bool cont = true;
    CoarseSource source = CoarseSource::KnnVote;
    int n_override = -1;
    int k_override = -1;
};

struct RowResult {
    AblationRow row;
    EvalReport report;
    std::string warning;
};

// One call generates train and test with identical latent geometry (same
// lift / texture, same centers) and disjoint noise draws, split per class.
inline std::pair<Dataset, Dataset> generate_split(const SynthConfig& cfg,
                                                  std::size_t train_per_fine,
                                                  std::size_t test_per_fine) {
    auto full = generate_synthetic(cfg, train_per_fine + test_per_fine);
    Dataset train, test;
    train.hierarchy = test.hierarchy = full.hierarchy;
    train.input_shape = test.input_shape = full.input_shape;
    const std::size_t per = train_per_fine + test_per_fine;
    for (int f = 0; f < cfg.hierarchy.fine_count(); ++f) {
        const std::size_t base = static_cast<std::size_t>(f) * per;
        for (std::size_t i = 0; i < train_per_fine; ++i)
            train.items.push_back(full.items[base + i]);
        for (std::size_t i = 0; i < test_per_fine; ++i)
            test.items.push_back(full.items[base + train_per_fine + i]);
    }
    return {std::move(train), std::move(test)};
}

namespace detail {

struct TrainedArtifacts {
    std::shared_ptr<ModelBundle<float>> model;
    std::shared_ptr<FeatureRepository> repo;
    std::shared_ptr<std::vector<std::vector<float>>> test_embeddings;
};

} // namespace detail

inline std::vector<RowResult> run_ablation(const BenchmarkConfig& bench,
                                           const std::vector<AblationRow>& rows) {
    auto [train_set, test_set] = generate_split(bench.data, bench.train_per_fine,
                                                bench.test_per_fine);
    auto episodes = sample_episodes(test_set, bench.way, bench.shot, bench.queries_per_class,
                                    bench.episodes, bench.eval_seed);

    // Train each distinct loss configuration once.
    std::map<std::tuple<bool, bool, bool>, detail::TrainedArtifacts> cache;
    auto artifacts_for = [&](const AblationRow& row) -> detail::TrainedArtifacts& {
        const auto key = std::make_tuple(row.rec, row.align, row.cont);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;

        TrainConfig cfg = bench.train;
        cfg.weights.tie_alpha_beta = false;
        if (!row.rec) cfg.weights.alpha = 0;
        if (!row.align) cfg.weights.beta = 0;
        cfg.enable_cont = row.cont;

        detail::TrainedArtifacts art;
        art.model = std::make_shared<ModelBundle<float>>(
            make_model<float>(bench.arch, bench.data.hierarchy.coarse_count, cfg.ema_coeff,
                              bench.model_seed));
        train(train_set, *art.model, cfg);
        art.repo = std::make_shared<FeatureRepository>(build_repository(train_set, *art.model));
        std::vector<std::size_t> all(test_set.items.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        art.test_embeddings = std::make_shared<std::vector<std::vector<float>>>(
            embed_examples(*art.model, test_set, all));
        return cache.emplace(key, std::move(art)).first->second;
    };

    std::vector<RowResult> results;
    for (const auto& row : rows) {
        auto& art = artifacts_for(row);
        EvalOptions opts;
        opts.calibrate = row.cd;
        opts.calib = bench.calib;
        opts.calib.coarse_source = row.source;
        if (row.n_override >= 0) opts.calib.n = row.n_override;
        if (row.k_override > 0) opts.calib.k = row.k_override;

        RowResult rr;
        rr.row = row;
        if (row.align && !row.rec)
            rr.warning = "ALIGN without REC is an off-paper combination";
        rr.report = evaluate_episodes(episodes, *art.test_embeddings, test_set.hierarchy,
                                      art.repo.get(), opts);
        results.push_back(std::move(rr));
    }
    return results;
}

// The Table-3 style grid: baseline, +REC, +REC+ALIGN, +REC+ALIGN+CD.
inline std::vector<AblationRow> table3_rows() {
    std::vector<AblationRow> rows;
    rows.push_back({"baseline", false, false, false});
    rows.push_back({"+rec", true, false, false});
    rows.push_back({"+rec+align", true, true, false});
    rows.push_back({"+rec+align+cd", true, true, true});
    return rows;
}

// The Table-4 style comparison of coarse sources during calibration.
inline std::vector<AblationRow> coarse_source_rows() {
    std::vector<AblationRow> rows;
    AblationRow base{"all-features", true, true, true};
    base.source = CoarseSource::Unrestricted;
    rows.push_back(base);
    base.name = "knn-based";
    base.source = CoarseSource::KnnVote;
    rows.push_back(base);
    base.name = "coarse-labeled";
    base.source = CoarseSource::TrueLabel;
    rows.push_back(base);
    return rows;
}

inline std::vector<AblationRow> n_sweep_rows(const std::vector<int>& values) {
    std::vector<AblationRow> rows;
    for (int n : values) {
        AblationRow r{"n=" + std::to_string(n), true, true, true};
        r.n_override = n;
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<AblationRow> k_sweep_rows(const std::vector<int>& values) {
    std::vector<AblationRow> rows;
    for (int k : values) {
        AblationRow r{"k=" + std::to_string(k), true, true, true};
        r.k_override = k;
        rows.push_back(r);
    }
    return rows;
}

} // namespace c2fs
