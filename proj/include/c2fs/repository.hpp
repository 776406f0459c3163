#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c2fs/binio.hpp"
#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/model.hpp"
#include "c2fs/ops.hpp"

namespace c2fs {

// The training-set feature store T: unit-norm embeddings with coarse labels
// and an exact nearest-neighbour query surface. Immutable once built;
// concurrent queries are safe.
class FeatureRepository {
public:
    FeatureRepository() = default;
    FeatureRepository(std::size_t dim, int coarse_count)
        : dim_(dim), coarse_index_(static_cast<std::size_t>(coarse_count)) {
        if (dim == 0 || coarse_count <= 0)
            throw ValidationError("repository: dim and coarse_count must be positive");
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return coarse_.size(); }
    int coarse_count() const { return static_cast<int>(coarse_index_.size()); }

    const float* embedding(std::size_t i) const { return embeddings_.data() + i * dim_; }
    int coarse_label(std::size_t i) const { return coarse_[i]; }

    void add(const float* vec, int coarse) {
        if (coarse < 0 || static_cast<std::size_t>(coarse) >= coarse_index_.size())
            throw ValidationError("repository: coarse label " + std::to_string(coarse) +
                                  " out of range");
        double nrm = 0;
        for (std::size_t j = 0; j < dim_; ++j) nrm += static_cast<double>(vec[j]) * vec[j];
        if (std::abs(std::sqrt(nrm) - 1.0) > 1e-5)
            throw NumericError("repository: entry is not unit norm");
        embeddings_.insert(embeddings_.end(), vec, vec + dim_);
        coarse_index_[static_cast<std::size_t>(coarse)].push_back(static_cast<int>(coarse_.size()));
        coarse_.push_back(static_cast<std::uint16_t>(coarse));
    }

    // Exact T_y: the entry indices labeled y. Unknown labels give an empty set.
    const std::vector<int>& subset_by_coarse(int y) const {
        static const std::vector<int> empty;
        if (y < 0 || static_cast<std::size_t>(y) >= coarse_index_.size()) return empty;
        return coarse_index_[static_cast<std::size_t>(y)];
    }

    // Exact k nearest entries by cosine distance (equivalently Euclidean on
    // unit vectors), ascending distance, ties broken by lower entry index.
    // restrict_to limits candidates to one coarse class; exclude is an
    // optional per-entry mask of forbidden indices.
    std::vector<int> knn(const double* query, std::size_t k, int restrict_to = -1,
                         const std::vector<char>* exclude = nullptr) const {
        std::vector<std::pair<double, int>> cand;
        auto consider = [&](int idx) {
            if (exclude && (*exclude)[static_cast<std::size_t>(idx)]) return;
            const float* e = embedding(static_cast<std::size_t>(idx));
            double dot = 0;
            for (std::size_t j = 0; j < dim_; ++j) dot += static_cast<double>(e[j]) * query[j];
            cand.push_back({1.0 - dot, idx});
        };
        if (restrict_to >= 0) {
            for (int idx : subset_by_coarse(restrict_to)) consider(idx);
        } else {
            for (std::size_t i = 0; i < size(); ++i) consider(static_cast<int>(i));
        }
        if (k > cand.size())
            throw ValidationError("knn: k=" + std::to_string(k) + " exceeds " +
                                  std::to_string(cand.size()) + " eligible entries (of " +
                                  std::to_string(size()) + " total)");
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        std::vector<int> out(k);
        for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
        return out;
    }

    // Repository file: magic "C2FSREPO", version u32, d u32, count u64,
    // coarse_count u32; per entry coarse u16 + d f32. Bit-exact round trip.
    void save(const std::string& path) const {
        BinWriter w(path);
        w.magic(kMagic);
        w.u32(kVersion);
        w.u32(static_cast<std::uint32_t>(dim_));
        w.u64(size());
        w.u32(static_cast<std::uint32_t>(coarse_index_.size()));
        for (std::size_t i = 0; i < size(); ++i) {
            w.u16(coarse_[i]);
            w.f32_array(embedding(i), dim_);
        }
        w.close();
    }

    static FeatureRepository load(const std::string& path) {
        BinReader r(path);
        r.expect_magic(kMagic);
        if (r.u32() != kVersion)
            throw FormatError(path + ": unsupported repository version");
        const std::uint32_t dim = r.u32();
        const std::uint64_t count = r.u64();
        const std::uint32_t coarse_count = r.u32();
        if (dim == 0 || coarse_count == 0)
            throw FormatError(path + ": zero dimension or class count at byte " +
                              std::to_string(r.offset()));
        FeatureRepository repo(dim, static_cast<int>(coarse_count));
        std::vector<float> buf(dim);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint16_t coarse = r.u16();
            if (coarse >= coarse_count)
                throw ValidationError(path + ": entry " + std::to_string(i) + " coarse label " +
                                      std::to_string(coarse) + " out of range");
            r.f32_array(buf.data(), dim);
            repo.add(buf.data(), coarse);
        }
        return repo;
    }

private:
    static constexpr char kMagic[9] = "C2FSREPO";
    static constexpr std::uint32_t kVersion = 1;

    std::size_t dim_ = 0;
    std::vector<float> embeddings_;
    std::vector<std::uint16_t> coarse_;
    std::vector<std::vector<int>> coarse_index_;
};

// Unit-norm backbone embeddings for a batch of examples (test-time path:
// only the backbone is used, not the projector).
template <typename S>
std::vector<std::vector<float>> embed_examples(const ModelBundle<S>& model, const Dataset& ds,
                                               const std::vector<std::size_t>& indices,
                                               std::size_t batch_size = 64) {
    std::vector<std::vector<float>> out(indices.size());
    const std::size_t in_n = ds.input_numel();
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, indices.size() - start);
        Shape bs;
        if (ds.vector_mode())
            bs = {n, ds.input_shape[0]};
        else
            bs = {n, ds.input_shape[0], ds.input_shape[1], ds.input_shape[2]};
        Tensor<S> batch(bs);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& e = ds.items[indices[start + i]];
            for (std::size_t j = 0; j < in_n; ++j)
                batch.data[i * in_n + j] = static_cast<S>(e.input[j]);
        }
        auto pack = encode(model, batch);
        auto unit = ops::l2_normalize_rows(pack.fq).value();
        const std::size_t d = unit.shape[1];
        for (std::size_t i = 0; i < n; ++i) {
            out[start + i].resize(d);
            for (std::size_t j = 0; j < d; ++j)
                out[start + i][j] = static_cast<float>(unit.at2(i, j));
        }
    }
    return out;
}

// One entry per training example, in dataset order. Deterministic.
template <typename S>
FeatureRepository build_repository(const Dataset& ds, const ModelBundle<S>& model) {
    if (ds.items.empty()) throw ValidationError("build_repository: empty dataset");
    FeatureRepository repo(model.cfg.embedding_dim, model.coarse_count);
    std::vector<std::size_t> all(ds.items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto embs = embed_examples(model, ds, all);
    for (std::size_t i = 0; i < embs.size(); ++i) repo.add(embs[i].data(), ds.items[i].coarse);
    return repo;
}

} // namespace c2fs
