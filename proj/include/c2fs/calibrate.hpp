#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "c2fs/error.hpp"
#include "c2fs/linear_classifier.hpp"
#include "c2fs/repository.hpp"

namespace c2fs {

// Fine-grained classifier debiasing: assign each fine prototype a coarse
// class, iteratively pull an additional support set S_add from that class's
// repository pool, correct the prototype (Eq. 8) after each round, and train
// the episode classifier on support + additional features.

enum class CoarseSource {
    KnnVote,     // Eq. 6 majority vote over the k nearest repository entries
    TrueLabel,   // the support set's own coarse annotation
    Unrestricted // no coarse filter: S_add drawn from the whole repository
};

enum class FineHead { Logistic, NearestPrototype };

struct CalibrationConfig {
    int k = 10; // kNN votes for coarse assignment
    int m = 20; // neighbours added per round
    int n = 100; // target |S_add| per fine class
    CoarseSource coarse_source = CoarseSource::KnnVote;
    // Eq. 8 prints a sum of two centroids; mean_of_means halves it. Both give
    // the same direction, so selections and predictions are identical after
    // normalization.
    bool mean_of_means = false;
    FineHead head = FineHead::Logistic;
    LogisticConfig logistic;

    void validate() const {
        if (k <= 0 || m <= 0 || n < 0) throw ConfigError("calibration: k, m > 0 and n >= 0");
        if (n > 0 && m > n) throw ConfigError("calibration: m must be <= n");
    }
};

struct Prototype {
    int fine = -1;
    std::vector<double> vec; // unit norm after every correction
    int assigned_coarse = -1;
};

namespace detail {

inline void normalize_or_throw(std::vector<double>& v, const char* what) {
    double nrm = 0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) throw NumericError(std::string(what) + ": degenerate prototype (zero mean)");
    for (double& x : v) x /= nrm;
}

inline std::vector<double> mean_of(const std::vector<std::vector<double>>& vs) {
    std::vector<double> m(vs[0].size(), 0.0);
    for (const auto& v : vs)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += v[j];
    for (double& x : m) x /= static_cast<double>(vs.size());
    return m;
}

} // namespace detail

// Centroid of the class's support embeddings, L2-normalized.
inline Prototype init_prototype(int fine, const std::vector<std::vector<double>>& support) {
    if (support.empty()) throw ValidationError("init_prototype: empty support set");
    Prototype p;
    p.fine = fine;
    p.vec = detail::mean_of(support);
    detail::normalize_or_throw(p.vec, "init_prototype");
    return p;
}

// Eq. 6: majority vote among the k nearest repository entries; ties go to
// the label of the single nearest neighbour among the tied classes.
inline int assign_coarse(const Prototype& proto, const FeatureRepository& repo, int k) {
    if (k <= 0) throw ConfigError("assign_coarse: k must be positive");
    auto nn = repo.knn(proto.vec.data(), static_cast<std::size_t>(k));
    std::vector<int> votes(static_cast<std::size_t>(repo.coarse_count()), 0);
    for (int idx : nn) ++votes[static_cast<std::size_t>(repo.coarse_label(static_cast<std::size_t>(idx)))];
    int best_count = 0;
    for (int v : votes) best_count = std::max(best_count, v);
    for (int idx : nn) { // nn is ascending by distance
        const int label = repo.coarse_label(static_cast<std::size_t>(idx));
        if (votes[static_cast<std::size_t>(label)] == best_count) return label;
    }
    return repo.coarse_label(static_cast<std::size_t>(nn[0]));
}

struct CalibrationResult {
    Prototype prototype;
    std::vector<int> s_add; // repository entry indices, in selection order
    int rounds = 0;         // always ceil(n/m)
};

// The iterative correction loop: each round pulls the m nearest unused
// entries from the class pool (the last round only what is still missing),
// then recomputes the prototype as mean(S_sup) + mean(S_add), normalized.
// Exactly ceil(n/m) rounds; |S_add| == n on return.
inline CalibrationResult calibrate_class(const std::vector<std::vector<double>>& support,
                                         int fine, int coarse, const FeatureRepository& repo,
                                         const CalibrationConfig& cfg) {
    cfg.validate();
    Prototype proto = init_prototype(fine, support);
    proto.assigned_coarse = coarse;

    const std::size_t pool =
        coarse >= 0 ? repo.subset_by_coarse(coarse).size() : repo.size();
    if (pool < static_cast<std::size_t>(cfg.n))
        throw ValidationError("calibrate_class: pool for coarse " + std::to_string(coarse) +
                              " has " + std::to_string(pool) + " entries, need n=" +
                              std::to_string(cfg.n));

    CalibrationResult res;
    if (cfg.n == 0) {
        res.prototype = proto;
        return res;
    }

    const std::vector<double> support_mean = detail::mean_of(support);
    std::vector<char> taken(repo.size(), 0);
    std::vector<double> add_sum(repo.dim(), 0.0);

    while (res.s_add.size() < static_cast<std::size_t>(cfg.n)) {
        const std::size_t want =
            std::min<std::size_t>(cfg.m, static_cast<std::size_t>(cfg.n) - res.s_add.size());
        auto picked = repo.knn(proto.vec.data(), want, coarse, &taken);
        ++res.rounds;
        for (int idx : picked) {
            taken[static_cast<std::size_t>(idx)] = 1;
            res.s_add.push_back(idx);
            const float* e = repo.embedding(static_cast<std::size_t>(idx));
            for (std::size_t j = 0; j < add_sum.size(); ++j) add_sum[j] += e[j];
        }
        // Eq. 8: mean of support plus mean of the additional set so far.
        const double inv_add = 1.0 / static_cast<double>(res.s_add.size());
        const double scale = cfg.mean_of_means ? 0.5 : 1.0;
        for (std::size_t j = 0; j < proto.vec.size(); ++j)
            proto.vec[j] = scale * (support_mean[j] + add_sum[j] * inv_add);
        detail::normalize_or_throw(proto.vec, "calibrate_class");
    }
    res.prototype = proto;
    return res;
}

// Episode-level classifier over unit embeddings. The logistic head trains on
// S_sup union S_add per class; the nearest-prototype head scores by cosine
// against the calibrated prototypes.
struct FineClassifier {
    FineHead head = FineHead::Logistic;
    LogisticModel logistic;
    std::vector<std::vector<double>> prototypes; // unit vectors, one per class

    int predict(const double* x) const {
        if (head == FineHead::Logistic) return logistic.predict(x);
        int best = 0;
        double best_dot = -2.0;
        for (std::size_t c = 0; c < prototypes.size(); ++c) {
            double dot = 0;
            for (std::size_t j = 0; j < prototypes[c].size(); ++j) dot += prototypes[c][j] * x[j];
            if (dot > best_dot) {
                best_dot = dot;
                best = static_cast<int>(c);
            }
        }
        return best;
    }
};

inline FineClassifier train_fine_classifier(
    const std::vector<std::vector<std::vector<double>>>& per_class_features,
    const std::vector<std::vector<double>>& prototypes, const CalibrationConfig& cfg) {
    const int way = static_cast<int>(per_class_features.size());
    if (way == 0) throw ValidationError("train_fine_classifier: no classes");
    FineClassifier clf;
    clf.head = cfg.head;
    clf.prototypes = prototypes;
    if (cfg.head == FineHead::NearestPrototype) {
        if (static_cast<int>(prototypes.size()) != way)
            throw ValidationError("train_fine_classifier: prototype count mismatch");
        return clf;
    }
    std::size_t dim = 0;
    std::size_t count = 0;
    for (const auto& feats : per_class_features) {
        if (feats.empty())
            throw ValidationError("train_fine_classifier: a class has an empty training set");
        dim = feats[0].size();
        count += feats.size();
    }
    std::vector<double> features;
    features.reserve(count * dim);
    std::vector<int> labels;
    labels.reserve(count);
    for (int c = 0; c < way; ++c)
        for (const auto& f : per_class_features[static_cast<std::size_t>(c)]) {
            features.insert(features.end(), f.begin(), f.end());
            labels.push_back(c);
        }
    clf.logistic = LogisticModel(dim, way);
    clf.logistic.fit(features, labels, cfg.logistic);
    return clf;
}

} // namespace c2fs
