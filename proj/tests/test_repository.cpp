#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "c2fs/repository.hpp"
#include "c2fs/rng.hpp"
#include "c2fs/synth.hpp"
#include "c2fs/trainer.hpp"

using namespace c2fs;

namespace {

std::vector<float> random_unit(std::size_t d, Rng& rng) {
    std::vector<float> v(d);
    double nrm = 0;
    for (auto& x : v) {
        x = static_cast<float>(rng.normal());
        nrm += static_cast<double>(x) * x;
    }
    nrm = std::sqrt(nrm);
    for (auto& x : v) x = static_cast<float>(x / nrm);
    // One float-precision renormalization pass keeps the stored norm within
    // the repository's 1e-5 contract.
    double n2 = 0;
    for (float x : v) n2 += static_cast<double>(x) * x;
    n2 = std::sqrt(n2);
    for (auto& x : v) x = static_cast<float>(x / n2);
    return v;
}

FeatureRepository random_repo(std::size_t count, std::size_t dim, int coarse_count, Rng& rng) {
    FeatureRepository repo(dim, coarse_count);
    for (std::size_t i = 0; i < count; ++i) {
        auto v = random_unit(dim, rng);
        repo.add(v.data(), static_cast<int>(rng.index(static_cast<std::size_t>(coarse_count))));
    }
    return repo;
}

// Independent exact-scan oracle: cosine distance accumulated in long double
// over reversed index order, full stable sort with explicit (distance, index)
// tie-break, filters applied before selection.
std::vector<int> brute_force_knn(const FeatureRepository& repo, const std::vector<double>& q,
                                 std::size_t k, int restrict_to,
                                 const std::vector<char>* exclude) {
    std::vector<std::pair<double, int>> all;
    for (std::size_t i = 0; i < repo.size(); ++i) {
        if (restrict_to >= 0 && repo.coarse_label(i) != restrict_to) continue;
        if (exclude && (*exclude)[i]) continue;
        long double dot = 0;
        const float* e = repo.embedding(i);
        for (std::size_t j = repo.dim(); j-- > 0;)
            dot += static_cast<long double>(e[j]) * static_cast<long double>(q[j]);
        all.push_back({1.0 - static_cast<double>(dot), static_cast<int>(i)});
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    for (std::size_t i = 0; i < k && i < all.size(); ++i) out.push_back(all[i].second);
    return out;
}

} // namespace

TEST_CASE("repository entries keep unit norm and the coarse index partitions them") {
    Rng rng(17);
    auto repo = random_repo(100, 8, 4, rng);
    REQUIRE(repo.size() == 100);
    std::size_t total = 0;
    for (int y = 0; y < 4; ++y) {
        for (int idx : repo.subset_by_coarse(y)) REQUIRE(repo.coarse_label(static_cast<std::size_t>(idx)) == y);
        total += repo.subset_by_coarse(y).size();
    }
    REQUIRE(total == 100);
    for (std::size_t i = 0; i < repo.size(); ++i) {
        double nrm = 0;
        for (std::size_t j = 0; j < repo.dim(); ++j)
            nrm += static_cast<double>(repo.embedding(i)[j]) * repo.embedding(i)[j];
        REQUIRE_THAT(std::sqrt(nrm), Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
    // Disjointness across classes.
    std::vector<int> seen(repo.size(), 0);
    for (int y = 0; y < 4; ++y)
        for (int idx : repo.subset_by_coarse(y)) ++seen[static_cast<std::size_t>(idx)];
    for (int s : seen) REQUIRE(s == 1);

    REQUIRE(repo.subset_by_coarse(99).empty());
    std::vector<float> bad(8, 0.5f);
    REQUIRE_THROWS_AS(repo.add(bad.data(), 0), NumericError);
}

TEST_CASE("a stored entry is its own nearest neighbour") {
    Rng rng(18);
    auto repo = random_repo(50, 6, 3, rng);
    for (std::size_t i = 0; i < repo.size(); i += 7) {
        std::vector<double> q(repo.dim());
        for (std::size_t j = 0; j < repo.dim(); ++j) q[j] = repo.embedding(i)[j];
        auto nn = repo.knn(q.data(), 1);
        REQUIRE(nn.size() == 1);
        REQUIRE(nn[0] == static_cast<int>(i));
    }
}

TEST_CASE("knn agrees with the brute-force oracle including restrict and exclude") {
    Rng rng(19);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t count = 20 + rng.index(400);
        const std::size_t dim = 3 + rng.index(10);
        const int coarse = 2 + static_cast<int>(rng.index(3));
        auto repo = random_repo(count, dim, coarse, rng);

        std::vector<double> q(dim);
        double nrm = 0;
        for (auto& x : q) {
            x = rng.normal();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        for (auto& x : q) x /= nrm;

        for (std::size_t k : {std::size_t(1), std::size_t(5), std::size_t(10)}) {
            if (k > count) continue;
            REQUIRE(repo.knn(q.data(), k) == brute_force_knn(repo, q, k, -1, nullptr));
        }

        const int y = static_cast<int>(rng.index(static_cast<std::size_t>(coarse)));
        const std::size_t avail = repo.subset_by_coarse(y).size();
        if (avail >= 3) {
            auto got = repo.knn(q.data(), 3, y);
            REQUIRE(got == brute_force_knn(repo, q, 3, y, nullptr));
            for (int idx : got) REQUIRE(repo.coarse_label(static_cast<std::size_t>(idx)) == y);
        }

        std::vector<char> exclude(count, 0);
        for (std::size_t i = 0; i < count; i += 3) exclude[i] = 1;
        std::size_t eligible = 0;
        for (char c : exclude) eligible += c == 0;
        if (eligible >= 5) {
            auto got = repo.knn(q.data(), 5, -1, &exclude);
            REQUIRE(got == brute_force_knn(repo, q, 5, -1, &exclude));
            for (int idx : got) REQUIRE(exclude[static_cast<std::size_t>(idx)] == 0);
        }
    }
}

TEST_CASE("knn reports eligible counts when k is too large") {
    Rng rng(20);
    auto repo = random_repo(10, 4, 2, rng);
    try {
        std::vector<double> q(4, 0.5);
        repo.knn(q.data(), 11);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("k=11") != std::string::npos);
        REQUIRE(msg.find("10") != std::string::npos);
    }
}

TEST_CASE("repository persistence round-trips bit-exactly with identical knn answers") {
    Rng rng(21);
    auto repo = random_repo(64, 5, 3, rng);
    const std::string path = "repo_roundtrip.c2fsrepo";
    repo.save(path);
    auto back = FeatureRepository::load(path);
    REQUIRE(back.size() == repo.size());
    REQUIRE(back.dim() == repo.dim());
    for (std::size_t i = 0; i < repo.size(); ++i) {
        REQUIRE(back.coarse_label(i) == repo.coarse_label(i));
        for (std::size_t j = 0; j < repo.dim(); ++j)
            REQUIRE(back.embedding(i)[j] == repo.embedding(i)[j]);
    }
    std::vector<double> q(5);
    for (auto& x : q) x = rng.normal();
    REQUIRE(repo.knn(q.data(), 7) == back.knn(q.data(), 7));

    // save -> load -> save: identical bytes.
    const std::string path2 = "repo_roundtrip2.c2fsrepo";
    back.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(c1 == c2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("build_repository stores one unit entry per training example") {
    SynthConfig cfg;
    cfg.hierarchy = LabelHierarchy::from_counts({2, 2});
    cfg.ambient_dim = 10;
    cfg.coarse_radius = 1.0;
    cfg.fine_radius = 0.3;
    cfg.noise_sigma = 0.08;
    cfg.seed = 7;
    auto ds = generate_synthetic(cfg, 8);

    EncoderConfig mc;
    mc.input_shape = {10};
    mc.stage_channels = {16, 16, 12, 8};
    mc.embedding_dim = 6;
    mc.projector_dim = 6;
    auto model = make_model<float>(mc, 2, 0.999, 11);

    auto repo = build_repository(ds, model);
    REQUIRE(repo.size() == ds.items.size());
    REQUIRE(repo.dim() == 6);
    std::size_t total = 0;
    for (int y = 0; y < 2; ++y) total += repo.subset_by_coarse(y).size();
    REQUIRE(total == ds.items.size());

    // Deterministic rebuild.
    auto repo2 = build_repository(ds, model);
    for (std::size_t i = 0; i < repo.size(); ++i)
        for (std::size_t j = 0; j < repo.dim(); ++j)
            REQUIRE(repo.embedding(i)[j] == repo2.embedding(i)[j]);
}
