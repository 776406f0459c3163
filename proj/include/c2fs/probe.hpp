#pragma once

#include <array>
#include <string>
#include <vector>

#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/linear_classifier.hpp"
#include "c2fs/model.hpp"

namespace c2fs {

// Per-layer fine-grained probe: freeze the encoder, pool each stage output,
// train a linear softmax classifier under fine labels and report test
// accuracy. Index 0..3 are stages f^(1)..f^(4); index 4 is the embedding f^q.
struct ProbeConfig {
    LogisticConfig classifier{300, 0.5, 0.0};
    std::size_t batch_size = 64;
};

struct ProbeReport {
    std::array<double, 5> accuracy{};

    double deepest() const { return accuracy[4]; }
    double best_intermediate() const {
        double best = accuracy[0];
        for (std::size_t i = 1; i < 4; ++i) best = std::max(best, accuracy[i]);
        return best;
    }
};

namespace detail {

// Pooled per-layer features: GAP over spatial dims in image mode, the raw
// stage vector otherwise.
template <typename S>
std::array<std::vector<std::vector<double>>, 5> probe_features(const ModelBundle<S>& model,
                                                               const Dataset& ds,
                                                               std::size_t batch_size) {
    std::array<std::vector<std::vector<double>>, 5> out;
    const std::size_t in_n = ds.input_numel();
    for (std::size_t start = 0; start < ds.items.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, ds.items.size() - start);
        Shape bs;
        if (ds.vector_mode())
            bs = {n, ds.input_shape[0]};
        else
            bs = {n, ds.input_shape[0], ds.input_shape[1], ds.input_shape[2]};
        Tensor<S> batch(bs);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < in_n; ++j)
                batch.data[i * in_n + j] = static_cast<S>(ds.items[start + i].input[j]);
        auto pack = encode(model, batch);
        for (std::size_t layer = 0; layer < 4; ++layer) {
            Tensor<S> pooled = ds.vector_mode()
                                   ? pack.stages[layer].value()
                                   : ops::global_avg_pool(pack.stages[layer]).value();
            const std::size_t d = pooled.shape[1];
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> v(d);
                for (std::size_t j = 0; j < d; ++j) v[j] = pooled.at2(i, j);
                out[layer].push_back(std::move(v));
            }
        }
        const auto& fq = pack.fq.value();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> v(fq.shape[1]);
            for (std::size_t j = 0; j < fq.shape[1]; ++j) v[j] = fq.at2(i, j);
            out[4].push_back(std::move(v));
        }
    }
    return out;
}

} // namespace detail

// Model parameters are read-only throughout; the caller can hash a checkpoint
// before and after to confirm.
template <typename S>
ProbeReport layer_probe(const ModelBundle<S>& model, const Dataset& probe_train,
                        const Dataset& probe_test, const ProbeConfig& cfg = {}) {
    for (const Dataset* ds : {&probe_train, &probe_test})
        for (const auto& e : ds->items)
            if (e.fine < 0)
                throw ValidationError("layer_probe: every probe example needs a fine label");
    const int fine_count = probe_train.hierarchy.fine_count();

    auto train_feats = detail::probe_features(model, probe_train, cfg.batch_size);
    auto test_feats = detail::probe_features(model, probe_test, cfg.batch_size);

    std::vector<int> train_labels, test_labels;
    for (const auto& e : probe_train.items) train_labels.push_back(e.fine);
    for (const auto& e : probe_test.items) test_labels.push_back(e.fine);

    ProbeReport report;
    for (std::size_t layer = 0; layer < 5; ++layer) {
        const std::size_t d = train_feats[layer].front().size();
        std::vector<double> flat;
        flat.reserve(train_feats[layer].size() * d);
        for (const auto& v : train_feats[layer]) flat.insert(flat.end(), v.begin(), v.end());
        LogisticModel clf(d, fine_count);
        clf.fit(flat, train_labels, cfg.classifier);

        std::size_t correct = 0;
        for (std::size_t i = 0; i < test_feats[layer].size(); ++i)
            if (clf.predict(test_feats[layer][i].data()) == test_labels[i]) ++correct;
        report.accuracy[layer] =
            static_cast<double>(correct) / static_cast<double>(test_feats[layer].size());
    }
    return report;
}

} // namespace c2fs
