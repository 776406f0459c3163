#include <catch2/catch_amalgamated.hpp>

#include "c2fs/ablation.hpp"
#include "c2fs/calibrate.hpp"
#include "c2fs/ops.hpp"
#include "c2fs/optim.hpp"
#include "c2fs/rng.hpp"

using namespace c2fs;

namespace {

std::vector<double> unit(std::vector<double> v) {
    double nrm = 0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (double& x : v) x /= nrm;
    return v;
}

FeatureRepository repo_from(const std::vector<std::vector<double>>& vecs,
                            const std::vector<int>& labels, int coarse_count) {
    FeatureRepository repo(vecs[0].size(), coarse_count);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        auto u = unit(vecs[i]);
        std::vector<float> f(u.size());
        // Normalize in float space so stored entries satisfy the 1e-5 norm bound.
        double n2 = 0;
        for (std::size_t j = 0; j < u.size(); ++j) {
            f[j] = static_cast<float>(u[j]);
            n2 += static_cast<double>(f[j]) * f[j];
        }
        n2 = std::sqrt(n2);
        for (auto& x : f) x = static_cast<float>(x / n2);
        repo.add(f.data(), labels[i]);
    }
    return repo;
}

FeatureRepository random_labeled_repo(std::size_t per_class, std::size_t dim, int coarse_count,
                                      Rng& rng) {
    std::vector<std::vector<double>> vecs;
    std::vector<int> labels;
    for (int y = 0; y < coarse_count; ++y)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<double> v(dim);
            for (auto& x : v) x = rng.normal();
            vecs.push_back(std::move(v));
            labels.push_back(y);
        }
    return repo_from(vecs, labels, coarse_count);
}

// Literal re-implementation of the calibration loop: full distance scans,
// explicit sorting, Eq. 8 recomputed from scratch every round.
struct TraceResult {
    std::vector<int> selected;
    std::vector<double> proto;
};

TraceResult brute_force_calibration_trace(const std::vector<std::vector<double>>& support,
                                          int coarse, const FeatureRepository& repo, int m,
                                          int n) {
    std::vector<double> sup_mean(support[0].size(), 0.0);
    for (const auto& s : support)
        for (std::size_t j = 0; j < sup_mean.size(); ++j) sup_mean[j] += s[j];
    for (double& x : sup_mean) x /= static_cast<double>(support.size());
    std::vector<double> proto = unit(sup_mean);

    TraceResult out;
    while (static_cast<int>(out.selected.size()) < n) {
        const int want = std::min(m, n - static_cast<int>(out.selected.size()));
        std::vector<std::pair<double, int>> dist;
        for (std::size_t i = 0; i < repo.size(); ++i) {
            if (coarse >= 0 && repo.coarse_label(i) != coarse) continue;
            if (std::find(out.selected.begin(), out.selected.end(), static_cast<int>(i)) !=
                out.selected.end())
                continue;
            double dot = 0;
            for (std::size_t j = 0; j < repo.dim(); ++j)
                dot += static_cast<double>(repo.embedding(i)[j]) * proto[j];
            dist.push_back({1.0 - dot, static_cast<int>(i)});
        }
        std::sort(dist.begin(), dist.end());
        for (int t = 0; t < want; ++t) out.selected.push_back(dist[static_cast<std::size_t>(t)].second);

        std::vector<double> add_mean(sup_mean.size(), 0.0);
        for (int idx : out.selected)
            for (std::size_t j = 0; j < add_mean.size(); ++j)
                add_mean[j] += repo.embedding(static_cast<std::size_t>(idx))[j];
        for (double& x : add_mean) x /= static_cast<double>(out.selected.size());
        std::vector<double> p(sup_mean.size());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = sup_mean[j] + add_mean[j];
        proto = unit(p);
    }
    out.proto = proto;
    return out;
}

} // namespace

TEST_CASE("prototype initialization") {
    // Single support vector: prototype is its direction.
    auto p = init_prototype(0, {{3.0, 0.0, 4.0}});
    REQUIRE_THAT(p.vec[0], Catch::Matchers::WithinAbs(0.6, 1e-12));
    REQUIRE_THAT(p.vec[2], Catch::Matchers::WithinAbs(0.8, 1e-12));

    // Antipodal supports cancel: degenerate.
    REQUIRE_THROWS_AS(init_prototype(0, {{1.0, 0.0}, {-1.0, 0.0}}), NumericError);
    REQUIRE_THROWS_AS(init_prototype(0, {}), ValidationError);

    // Random supports vs brute-force mean + normalize.
    Rng rng(3);
    std::vector<std::vector<double>> sup;
    for (int i = 0; i < 5; ++i) {
        std::vector<double> v(4);
        for (auto& x : v) x = rng.normal();
        sup.push_back(v);
    }
    auto proto = init_prototype(1, sup);
    std::vector<double> mean(4, 0.0);
    for (const auto& v : sup)
        for (std::size_t j = 0; j < 4; ++j) mean[j] += v[j] / 5.0;
    auto expect = unit(mean);
    for (std::size_t j = 0; j < 4; ++j)
        REQUIRE_THAT(proto.vec[j], Catch::Matchers::WithinAbs(expect[j], 1e-10));
}

TEST_CASE("coarse assignment by majority vote with nearest-neighbour tie-break") {
    // Three entries: two of class A slightly further, one of class B nearest.
    std::vector<std::vector<double>> vecs{{1.0, 0.05}, {1.0, 0.1}, {1.0, 0.0}};
    std::vector<int> labels{0, 0, 1};
    auto repo = repo_from(vecs, labels, 2);
    Prototype p;
    p.vec = unit({1.0, 0.0});

    // k=3: labels [B, A, A] by distance; majority A.
    REQUIRE(assign_coarse(p, repo, 3) == 0);
    // k=2: one vote each; tie resolved by the nearest neighbour's label (B).
    REQUIRE(assign_coarse(p, repo, 2) == 1);
    // k defaults to 10 in the calibration config.
    REQUIRE(CalibrationConfig{}.k == 10);
}

TEST_CASE("coarse assignment matches ground truth on separated synthetic clusters") {
    SynthConfig cfg;
    cfg.hierarchy = LabelHierarchy::from_counts({3, 3, 3});
    cfg.ambient_dim = 16;
    cfg.coarse_radius = 1.0;
    cfg.fine_radius = 0.25;
    cfg.noise_sigma = 0.05;
    cfg.seed = 5;
    auto [train, test] = generate_split(cfg, 30, 5);

    // Repository over raw normalized inputs (identity features).
    std::vector<std::vector<double>> vecs;
    std::vector<int> labels;
    for (const auto& e : train.items) {
        vecs.push_back(std::vector<double>(e.input.begin(), e.input.end()));
        labels.push_back(e.coarse);
    }
    auto repo = repo_from(vecs, labels, cfg.hierarchy.coarse_count);

    for (int f = 0; f < cfg.hierarchy.fine_count(); ++f) {
        auto idx = test.indices_of_fine(f);
        std::vector<std::vector<double>> sup{unit(std::vector<double>(
            test.items[idx[0]].input.begin(), test.items[idx[0]].input.end()))};
        auto proto = init_prototype(f, sup);
        REQUIRE(assign_coarse(proto, repo, 10) == cfg.hierarchy.parent_of(f));
    }
}

TEST_CASE("calibration respects round structure and exact sizes") {
    Rng rng(11);
    auto repo = random_labeled_repo(120, 6, 2, rng);
    std::vector<std::vector<double>> sup;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> v(6);
        for (auto& x : v) x = rng.normal();
        sup.push_back(v);
    }

    SECTION("m == n: a single selection round") {
        CalibrationConfig cfg;
        cfg.m = cfg.n = 10;
        auto res = calibrate_class(sup, 0, 1, repo, cfg);
        REQUIRE(res.s_add.size() == 10);
    }

    SECTION("m=20, n=100: exactly five rounds of twenty distinct entries") {
        CalibrationConfig cfg; // paper defaults k=10, m=20, n=100
        REQUIRE(cfg.m == 20);
        REQUIRE(cfg.n == 100);
        auto res = calibrate_class(sup, 0, 1, repo, cfg);
        REQUIRE(res.s_add.size() == 100);
        std::set<int> uniq(res.s_add.begin(), res.s_add.end());
        REQUIRE(uniq.size() == 100);
        for (int idx : res.s_add) REQUIRE(repo.coarse_label(static_cast<std::size_t>(idx)) == 1);
    }

    SECTION("final round truncates to the remaining budget") {
        CalibrationConfig cfg;
        cfg.m = 3;
        cfg.n = 7; // rounds: 3 + 3 + 1
        auto res = calibrate_class(sup, 0, 0, repo, cfg);
        REQUIRE(res.s_add.size() == 7);
        std::set<int> uniq(res.s_add.begin(), res.s_add.end());
        REQUIRE(uniq.size() == 7);
    }

    SECTION("pool smaller than n is an error reporting the available count") {
        CalibrationConfig cfg;
        cfg.m = 20;
        cfg.n = 200;
        try {
            calibrate_class(sup, 0, 1, repo, cfg);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("120") != std::string::npos);
            REQUIRE(msg.find("200") != std::string::npos);
        }
    }
}

TEST_CASE("calibration loop matches an independent brute-force trace") {
    // |T_y|=12, m=2, n=6, d=3, fixed seed.
    Rng rng(42);
    auto repo = random_labeled_repo(12, 3, 1, rng);
    std::vector<std::vector<double>> sup;
    for (int i = 0; i < 2; ++i) {
        std::vector<double> v(3);
        for (auto& x : v) x = rng.normal();
        sup.push_back(v);
    }
    CalibrationConfig cfg;
    cfg.m = 2;
    cfg.n = 6;
    auto res = calibrate_class(sup, 0, 0, repo, cfg);
    auto trace = brute_force_calibration_trace(sup, 0, repo, 2, 6);
    REQUIRE(res.s_add == trace.selected);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE_THAT(res.prototype.vec[j], Catch::Matchers::WithinAbs(trace.proto[j], 1e-10));
}

TEST_CASE("unrestricted mode draws from the whole repository") {
    Rng rng(13);
    auto repo = random_labeled_repo(30, 4, 3, rng);
    std::vector<std::vector<double>> sup{{1.0, 0.0, 0.0, 0.0}};
    CalibrationConfig cfg;
    cfg.m = 10;
    cfg.n = 40; // more than one class holds
    auto res = calibrate_class(sup, 0, -1, repo, cfg);
    REQUIRE(res.s_add.size() == 40);
    std::set<int> labels;
    for (int idx : res.s_add) labels.insert(repo.coarse_label(static_cast<std::size_t>(idx)));
    REQUIRE(labels.size() > 1);
}

TEST_CASE("cosine decisions are invariant to embedding magnitude") {
    Rng rng(14);
    auto repo = random_labeled_repo(40, 5, 2, rng);

    SECTION("prototype initialization ignores support scale") {
        std::vector<std::vector<double>> sup;
        for (int i = 0; i < 2; ++i) {
            std::vector<double> v(5);
            for (auto& x : v) x = rng.normal();
            sup.push_back(v);
        }
        auto scaled = sup;
        for (auto& v : scaled)
            for (auto& x : v) x *= 37.5;
        auto a = init_prototype(0, sup);
        auto b = init_prototype(0, scaled);
        for (std::size_t j = 0; j < 5; ++j)
            REQUIRE_THAT(a.vec[j], Catch::Matchers::WithinAbs(b.vec[j], 1e-12));
    }

    SECTION("knn selection ignores query scale") {
        std::vector<double> q(5);
        for (auto& x : q) x = rng.normal();
        auto scaled = q;
        for (auto& x : scaled) x *= 37.5;
        REQUIRE(repo.knn(q.data(), 9) == repo.knn(scaled.data(), 9));
    }

    SECTION("nearest-prototype predictions ignore query scale") {
        std::vector<std::vector<double>> protos{unit({1.0, 0.1, 0.0, -0.3, 0.2}),
                                                unit({-0.4, 0.9, 0.5, 0.0, 0.1})};
        CalibrationConfig cfg;
        cfg.head = FineHead::NearestPrototype;
        auto clf = train_fine_classifier({{{}}, {{}}}, protos, cfg);
        for (int t = 0; t < 20; ++t) {
            std::vector<double> x(5);
            for (auto& v : x) v = rng.normal();
            auto sx = x;
            for (auto& v : sx) v *= 123.0;
            REQUIRE(clf.predict(x.data()) == clf.predict(sx.data()));
        }
    }

    SECTION("full calibration trace is unchanged when unit supports are rescaled upstream") {
        // The pipeline normalizes support embeddings before calibration;
        // a power-of-two upstream scale therefore renormalizes to the exact
        // same unit vectors and every selection decision is preserved.
        std::vector<std::vector<double>> sup;
        for (int i = 0; i < 2; ++i) {
            std::vector<double> v(5);
            for (auto& x : v) x = rng.normal();
            sup.push_back(unit(v));
        }
        std::vector<std::vector<double>> rescaled;
        for (auto v : sup) {
            for (auto& x : v) x *= 32.0;
            rescaled.push_back(unit(v));
        }
        CalibrationConfig cfg;
        cfg.m = 5;
        cfg.n = 15;
        auto a = calibrate_class(sup, 0, 1, repo, cfg);
        auto b = calibrate_class(rescaled, 0, 1, repo, cfg);
        REQUIRE(a.s_add == b.s_add);
        for (std::size_t j = 0; j < 5; ++j)
            REQUIRE(a.prototype.vec[j] == b.prototype.vec[j]);
    }
}

TEST_CASE("mean-of-means variant selects identical entries (scale-equivalent)") {
    Rng rng(15);
    auto repo = random_labeled_repo(40, 5, 2, rng);
    std::vector<std::vector<double>> sup{{0.3, -1.2, 0.4, 0.9, -0.2}};
    CalibrationConfig cfg;
    cfg.m = 4;
    cfg.n = 12;
    auto literal = calibrate_class(sup, 0, 0, repo, cfg);
    cfg.mean_of_means = true;
    auto halved = calibrate_class(sup, 0, 0, repo, cfg);
    REQUIRE(literal.s_add == halved.s_add);
    for (std::size_t j = 0; j < 5; ++j)
        REQUIRE_THAT(literal.prototype.vec[j],
                     Catch::Matchers::WithinAbs(halved.prototype.vec[j], 1e-12));
}

TEST_CASE("purity under ground truth on synthetic data") {
    SynthConfig scfg;
    scfg.hierarchy = LabelHierarchy::from_counts({2, 2});
    scfg.ambient_dim = 10;
    scfg.coarse_radius = 1.0;
    scfg.fine_radius = 0.25;
    scfg.noise_sigma = 0.05;
    scfg.seed = 9;
    auto [train, test] = generate_split(scfg, 25, 4);

    std::vector<std::vector<double>> vecs;
    std::vector<int> labels;
    for (const auto& e : train.items) {
        vecs.push_back(std::vector<double>(e.input.begin(), e.input.end()));
        labels.push_back(e.coarse);
    }
    auto repo = repo_from(vecs, labels, scfg.hierarchy.coarse_count);

    CalibrationConfig cfg;
    cfg.m = 5;
    cfg.n = 20;
    for (int f = 0; f < scfg.hierarchy.fine_count(); ++f) {
        const int truth = scfg.hierarchy.parent_of(f);
        auto idx = test.indices_of_fine(f);
        std::vector<std::vector<double>> sup{std::vector<double>(
            test.items[idx[0]].input.begin(), test.items[idx[0]].input.end())};
        auto res = calibrate_class(sup, f, truth, repo, cfg);
        for (int e : res.s_add) REQUIRE(repo.coarse_label(static_cast<std::size_t>(e)) == truth);
    }
}

TEST_CASE("fine classifier heads") {
    SECTION("linearly separable two-class toy reaches 100% training accuracy") {
        std::vector<std::vector<std::vector<double>>> feats(2);
        feats[0] = {{1.0, 0.1}, {0.9, -0.1}, {1.1, 0.0}};
        feats[1] = {{-1.0, 0.1}, {-0.9, -0.2}, {-1.05, 0.05}};
        CalibrationConfig cfg;
        auto clf = train_fine_classifier(feats, {}, cfg);
        for (int c = 0; c < 2; ++c)
            for (const auto& f : feats[static_cast<std::size_t>(c)])
                REQUIRE(clf.predict(f.data()) == c);
    }

    SECTION("nearest-prototype head predicts its own prototype's class") {
        CalibrationConfig cfg;
        cfg.head = FineHead::NearestPrototype;
        std::vector<std::vector<double>> protos{unit({1.0, 0.2, 0.0}), unit({-0.5, 1.0, 0.3}),
                                                unit({0.0, -0.4, 1.0})};
        auto clf = train_fine_classifier({{{}}, {{}}, {{}}}, protos, cfg);
        for (int c = 0; c < 3; ++c)
            REQUIRE(clf.predict(protos[static_cast<std::size_t>(c)].data()) == c);
    }

    SECTION("a class with an empty training set is an error") {
        std::vector<std::vector<std::vector<double>>> feats(2);
        feats[0] = {{1.0, 0.0}};
        CalibrationConfig cfg;
        REQUIRE_THROWS_AS(train_fine_classifier(feats, {}, cfg), ValidationError);
    }
}

TEST_CASE("logistic head matches an autodiff-built gradient-descent oracle") {
    // Same hyperparameters, two independent implementations; predictions on
    // 100 queries must agree.
    Rng rng(23);
    const std::size_t d = 4;
    const int classes = 3;
    std::vector<std::vector<std::vector<double>>> feats(static_cast<std::size_t>(classes));
    std::vector<double> flat;
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < 12; ++i) {
            std::vector<double> v(d);
            for (std::size_t j = 0; j < d; ++j)
                v[j] = rng.normal() + (j == static_cast<std::size_t>(c) ? 1.5 : 0.0);
            v = unit(v);
            feats[static_cast<std::size_t>(c)].push_back(v);
            flat.insert(flat.end(), v.begin(), v.end());
            labels.push_back(c);
        }

    CalibrationConfig cfg;
    cfg.logistic = {200, 0.5, 1e-3};
    auto clf = train_fine_classifier(feats, {}, cfg);

    // Oracle: the same objective trained through the autodiff stack.
    auto W = make_parameter<double>(Tensor<double>::zeros({d, static_cast<std::size_t>(classes)}),
                                    "W");
    auto b = make_parameter<double>(Tensor<double>::zeros({static_cast<std::size_t>(classes)}),
                                    "b");
    Tensor<double> X({labels.size(), d}, flat);
    SgdOptimizer<double> opt({W, b}, 0.5, 0.0);
    for (int step = 0; step < 200; ++step) {
        auto logits = ops::linear(make_constant(X), W, b);
        auto ce = ops::softmax_cross_entropy(logits, labels);
        auto l2 = ops::scale(ops::mse(W, make_constant<double>(Tensor<double>::zeros(W.shape()))),
                             1e-3 * static_cast<double>(W.value().numel()));
        backward(ops::weighted_sum<double>({ce, l2}, {1.0, 1.0}));
        opt.step();
    }

    int agreements = 0;
    for (int q = 0; q < 100; ++q) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal();
        v = unit(v);
        std::vector<double> z(static_cast<std::size_t>(classes));
        // Oracle prediction.
        int oracle_best = 0;
        for (int c = 0; c < classes; ++c) {
            double acc = b.value()[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < d; ++j)
                acc += W.value().at2(j, static_cast<std::size_t>(c)) * v[j];
            z[static_cast<std::size_t>(c)] = acc;
            if (acc > z[static_cast<std::size_t>(oracle_best)]) oracle_best = c;
        }
        agreements += clf.predict(v.data()) == oracle_best;
    }
    REQUIRE(agreements == 100);
}
