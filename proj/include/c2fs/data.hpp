#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "c2fs/error.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Two-level label taxonomy: every fine class has exactly one coarse parent.
struct LabelHierarchy {
    int coarse_count = 0;
    std::vector<int> fine_to_coarse; // index = fine id; -1 = unknown parent

    LabelHierarchy() = default;

    // Contiguous construction: coarse class j owns fine_per_coarse[j] fine ids
    // in order.
    static LabelHierarchy from_counts(const std::vector<int>& fine_per_coarse) {
        LabelHierarchy h;
        h.coarse_count = static_cast<int>(fine_per_coarse.size());
        for (int j = 0; j < h.coarse_count; ++j) {
            if (fine_per_coarse[j] <= 0)
                throw ValidationError("hierarchy: fine_per_coarse must be positive");
            for (int i = 0; i < fine_per_coarse[j]; ++i) h.fine_to_coarse.push_back(j);
        }
        return h;
    }

    int fine_count() const { return static_cast<int>(fine_to_coarse.size()); }

    int parent_of(int fine) const {
        if (fine < 0 || fine >= fine_count())
            throw ValidationError("hierarchy: fine label " + std::to_string(fine) +
                                  " out of range [0," + std::to_string(fine_count()) + ")");
        return fine_to_coarse[static_cast<std::size_t>(fine)];
    }

    std::vector<int> fines_of(int coarse) const {
        std::vector<int> out;
        for (int f = 0; f < fine_count(); ++f)
            if (fine_to_coarse[static_cast<std::size_t>(f)] == coarse) out.push_back(f);
        return out;
    }

    // Checks totality and surjectivity of the fine -> coarse map.
    void validate() const {
        if (coarse_count <= 0) throw ValidationError("hierarchy: coarse_count must be positive");
        if (fine_to_coarse.empty()) throw ValidationError("hierarchy: no fine classes");
        std::vector<bool> hit(static_cast<std::size_t>(coarse_count), false);
        for (int c : fine_to_coarse) {
            if (c < 0 || c >= coarse_count)
                throw ValidationError("hierarchy: fine_to_coarse target " + std::to_string(c) +
                                      " out of range");
            hit[static_cast<std::size_t>(c)] = true;
        }
        for (int j = 0; j < coarse_count; ++j)
            if (!hit[static_cast<std::size_t>(j)])
                throw ValidationError("hierarchy: coarse class " + std::to_string(j) +
                                      " has no fine children");
    }
};

// One labeled input. Image inputs are CHW in [0,1]; vector inputs are raw
// reals. fine == -1 means the fine label is absent.
struct Example {
    std::vector<float> input;
    int coarse = 0;
    int fine = -1;
};

struct Dataset {
    LabelHierarchy hierarchy;
    Shape input_shape; // (D) for vectors, (C,H,W) for images
    std::vector<Example> items;

    bool vector_mode() const { return input_shape.size() == 1; }
    std::size_t input_numel() const { return shape_numel(input_shape); }
    std::size_t size() const { return items.size(); }

    // Hierarchy consistency over every item that carries a fine label.
    void validate() const {
        for (std::size_t i = 0; i < items.size(); ++i) {
            const Example& e = items[i];
            if (e.input.size() != input_numel())
                throw ValidationError("dataset: item " + std::to_string(i) + " has " +
                                      std::to_string(e.input.size()) + " values, expected " +
                                      std::to_string(input_numel()));
            if (e.coarse < 0 || e.coarse >= hierarchy.coarse_count)
                throw ValidationError("dataset: item " + std::to_string(i) + " coarse label " +
                                      std::to_string(e.coarse) + " out of range [0," +
                                      std::to_string(hierarchy.coarse_count) + ")");
            if (e.fine != -1) {
                if (e.fine >= hierarchy.fine_count())
                    throw ValidationError("dataset: item " + std::to_string(i) + " fine label " +
                                          std::to_string(e.fine) + " out of range [0," +
                                          std::to_string(hierarchy.fine_count()) + ")");
                const int parent = hierarchy.fine_to_coarse[static_cast<std::size_t>(e.fine)];
                if (parent != -1 && parent != e.coarse)
                    throw ValidationError("dataset: item " + std::to_string(i) + " fine " +
                                          std::to_string(e.fine) + " maps to coarse " +
                                          std::to_string(parent) + " but is labeled " +
                                          std::to_string(e.coarse));
            }
        }
    }

    std::vector<std::size_t> indices_of_fine(int fine) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < items.size(); ++i)
            if (items[i].fine == fine) out.push_back(i);
        return out;
    }
};

} // namespace c2fs
