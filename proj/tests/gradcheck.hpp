#pragma once

// Central finite-difference gradient verification (64-bit, step 1e-4).
// Builds the graph through `fn`, compares the analytic gradient of every
// checked leaf against (f(x+h) - f(x-h)) / 2h.

#include <cmath>
#include <functional>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/tensor.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0;
    std::size_t checked = 0;
};

// fn must rebuild the whole graph from the current leaf values and return the
// scalar loss Var. leaves are the inputs/parameters to differentiate.
inline Result check(const std::function<c2fs::Var<double>()>& fn,
                    std::vector<c2fs::Var<double>> leaves, double step = 1e-4) {
    Result res;
    auto loss = fn();
    for (auto& l : leaves) l.node()->zero_grad();
    c2fs::backward(loss);
    std::vector<c2fs::Tensor<double>> analytic;
    for (auto& l : leaves) {
        l.node()->ensure_grad();
        analytic.push_back(l.grad());
    }

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.value().numel(); ++i) {
            const double orig = leaf.value().data[i];
            leaf.value().data[i] = orig + step;
            const double fp = fn().item();
            leaf.value().data[i] = orig - step;
            const double fm = fn().item();
            leaf.value().data[i] = orig;
            const double numeric = (fp - fm) / (2 * step);
            const double ana = analytic[li].data[i];
            const double denom = std::max({std::abs(numeric), std::abs(ana), 1e-3});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(numeric - ana) / denom);
            ++res.checked;
        }
    }
    return res;
}

} // namespace gradcheck
