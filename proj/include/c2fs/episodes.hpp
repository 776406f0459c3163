#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "c2fs/calibrate.hpp"
#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/repository.hpp"
#include "c2fs/rng.hpp"

namespace c2fs {

// A sampled w-way k-shot task over the test set. Support and query index the
// test dataset and are disjoint; indices are grouped per class in `classes`
// order.
struct Episode {
    int way = 0;
    int shot = 0;
    int queries_per_class = 0;
    std::uint64_t episode_seed = 0;
    std::vector<int> classes;             // fine ids
    std::vector<std::size_t> support_idx; // way*shot, grouped by class
    std::vector<std::size_t> query_idx;   // way*queries_per_class, grouped by class
};

// way == -1 selects every fine class ("all-way"). Deterministic under seed;
// episode e draws from derive_seed(seed, e).
inline std::vector<Episode> sample_episodes(const Dataset& test_set, int way, int shot,
                                            int queries_per_class, int count,
                                            std::uint64_t seed) {
    if (shot <= 0 || queries_per_class <= 0 || count <= 0)
        throw ConfigError("episodes: shot, queries_per_class and count must be positive");
    const int fine_count = test_set.hierarchy.fine_count();
    const bool all_way = way < 0;
    const int w = all_way ? fine_count : way;
    if (w <= 0 || w > fine_count)
        throw ConfigError("episodes: way " + std::to_string(w) + " exceeds " +
                          std::to_string(fine_count) + " fine classes");

    std::vector<std::vector<std::size_t>> by_fine(static_cast<std::size_t>(fine_count));
    for (std::size_t i = 0; i < test_set.items.size(); ++i)
        if (test_set.items[i].fine >= 0)
            by_fine[static_cast<std::size_t>(test_set.items[i].fine)].push_back(i);
    const std::size_t need = static_cast<std::size_t>(shot + queries_per_class);
    for (int f = 0; f < fine_count; ++f)
        if (by_fine[static_cast<std::size_t>(f)].size() < need)
            throw ValidationError("episodes: fine class " + std::to_string(f) + " has " +
                                  std::to_string(by_fine[static_cast<std::size_t>(f)].size()) +
                                  " examples, needs " + std::to_string(need));

    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(count));
    for (int e = 0; e < count; ++e) {
        Episode ep;
        ep.way = w;
        ep.shot = shot;
        ep.queries_per_class = queries_per_class;
        ep.episode_seed = derive_seed(seed, static_cast<std::uint64_t>(e));
        Rng rng(ep.episode_seed);

        if (all_way) {
            for (int f = 0; f < fine_count; ++f) ep.classes.push_back(f);
        } else {
            std::vector<int> pool(static_cast<std::size_t>(fine_count));
            for (int f = 0; f < fine_count; ++f) pool[static_cast<std::size_t>(f)] = f;
            rng.shuffle(pool);
            pool.resize(static_cast<std::size_t>(w));
            std::sort(pool.begin(), pool.end());
            ep.classes = pool;
        }

        for (int cls : ep.classes) {
            auto idx = by_fine[static_cast<std::size_t>(cls)];
            rng.shuffle(idx);
            for (int s = 0; s < shot; ++s) ep.support_idx.push_back(idx[static_cast<std::size_t>(s)]);
            for (int q = 0; q < queries_per_class; ++q)
                ep.query_idx.push_back(idx[static_cast<std::size_t>(shot + q)]);
        }
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

struct EvalReport {
    std::size_t episode_count = 0;
    double mean_accuracy = 0;
    double ci95_halfwidth = 0; // 1.96 * stddev(per_episode, ddof=1) / sqrt(count)
    std::vector<double> per_episode;
};

inline EvalReport make_eval_report(std::vector<double> per_episode) {
    EvalReport r;
    r.per_episode = std::move(per_episode);
    r.episode_count = r.per_episode.size();
    if (r.episode_count == 0) return r;
    double sum = 0;
    for (double a : r.per_episode) sum += a;
    r.mean_accuracy = sum / static_cast<double>(r.episode_count);
    if (r.episode_count > 1) {
        double ss = 0;
        for (double a : r.per_episode) {
            const double d = a - r.mean_accuracy;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(r.episode_count - 1));
        r.ci95_halfwidth = 1.96 * sd / std::sqrt(static_cast<double>(r.episode_count));
    }
    return r;
}

struct EvalOptions {
    bool calibrate = true;
    CalibrationConfig calib;
    int threads = 0; // 0: use C2FS_THREADS or 1
};

inline int resolve_eval_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("C2FS_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

namespace detail {

// Classify one episode given the test-set embedding matrix.
inline double evaluate_episode(const Episode& ep,
                               const std::vector<std::vector<float>>& embeddings,
                               const LabelHierarchy& hierarchy, const FeatureRepository* repo,
                               const EvalOptions& opts) {
    const std::size_t w = static_cast<std::size_t>(ep.way);
    const std::size_t dim = embeddings.front().size();

    auto embedding_of = [&](std::size_t item) {
        std::vector<double> v(dim);
        const auto& e = embeddings[item];
        for (std::size_t j = 0; j < dim; ++j) v[j] = e[j];
        return v;
    };

    std::vector<std::vector<std::vector<double>>> features(w);
    std::vector<std::vector<double>> prototypes(w);
    for (std::size_t c = 0; c < w; ++c) {
        std::vector<std::vector<double>> support;
        for (int s = 0; s < ep.shot; ++s)
            support.push_back(embedding_of(ep.support_idx[c * static_cast<std::size_t>(ep.shot) +
                                                          static_cast<std::size_t>(s)]));
        const int fine = ep.classes[c];

        if (opts.calibrate) {
            if (!repo) throw ValidationError("evaluate: calibration requires a repository");
            Prototype proto = init_prototype(fine, support);
            int coarse = -1;
            switch (opts.calib.coarse_source) {
                case CoarseSource::KnnVote:
                    coarse = assign_coarse(proto, *repo, opts.calib.k);
                    break;
                case CoarseSource::TrueLabel:
                    coarse = hierarchy.parent_of(fine);
                    break;
                case CoarseSource::Unrestricted:
                    coarse = -1;
                    break;
            }
            auto result = calibrate_class(support, fine, coarse, *repo, opts.calib);
            prototypes[c] = result.prototype.vec;
            auto& feats = features[c];
            feats = support;
            for (int idx : result.s_add) {
                std::vector<double> v(dim);
                const float* e = repo->embedding(static_cast<std::size_t>(idx));
                for (std::size_t j = 0; j < dim; ++j) v[j] = e[j];
                feats.push_back(std::move(v));
            }
        } else {
            prototypes[c] = init_prototype(fine, support).vec;
            features[c] = support;
        }
    }

    CalibrationConfig head_cfg = opts.calib;
    FineClassifier clf = train_fine_classifier(features, prototypes, head_cfg);

    std::size_t correct = 0;
    for (std::size_t c = 0; c < w; ++c)
        for (int q = 0; q < ep.queries_per_class; ++q) {
            const auto v = embedding_of(
                ep.query_idx[c * static_cast<std::size_t>(ep.queries_per_class) +
                             static_cast<std::size_t>(q)]);
            if (clf.predict(v.data()) == static_cast<int>(c)) ++correct;
        }
    return static_cast<double>(correct) /
           static_cast<double>(w * static_cast<std::size_t>(ep.queries_per_class));
}

} // namespace detail

// Episodic evaluation over precomputed unit embeddings of the test set.
// Episodes are independent; with threads > 1 they fan out over workers and
// aggregate by index, so the report is thread-count invariant.
inline EvalReport evaluate_episodes(const std::vector<Episode>& episodes,
                                    const std::vector<std::vector<float>>& embeddings,
                                    const LabelHierarchy& hierarchy,
                                    const FeatureRepository* repo, const EvalOptions& opts) {
    if (episodes.empty()) throw ValidationError("evaluate: no episodes");
    if (opts.calibrate) opts.calib.validate();
    std::vector<double> acc(episodes.size(), 0.0);
    const int threads = resolve_eval_threads(opts.threads);
    if (threads <= 1) {
        for (std::size_t i = 0; i < episodes.size(); ++i)
            acc[i] = detail::evaluate_episode(episodes[i], embeddings, hierarchy, repo, opts);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    for (;;) {
                        const std::size_t i = next.fetch_add(1);
                        if (i >= episodes.size()) break;
                        acc[i] = detail::evaluate_episode(episodes[i], embeddings, hierarchy,
                                                          repo, opts);
                    }
                } catch (...) {
                    errors[static_cast<std::size_t>(t)] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return make_eval_report(std::move(acc));
}

// Full path: embed the test set through the backbone, then run the episodes.
template <typename S>
EvalReport evaluate(const ModelBundle<S>& model, const Dataset& test_set,
                    const std::vector<Episode>& episodes, const FeatureRepository* repo,
                    const EvalOptions& opts) {
    std::vector<std::size_t> all(test_set.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto embeddings = embed_examples(model, test_set, all);
    return evaluate_episodes(episodes, embeddings, test_set.hierarchy, repo, opts);
}

} // namespace c2fs
