#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "c2fs/error.hpp"

namespace c2fs {

// Multinomial logistic regression trained by deterministic full-batch
// gradient descent in double precision. Weights start at zero, the L2
// penalty applies to weights only.
struct LogisticConfig {
    int steps = 500;
    double lr = 0.5;
    double l2 = 1e-3;
};

class LogisticModel {
public:
    LogisticModel() = default;
    LogisticModel(std::size_t dim, int classes)
        : dim_(dim), classes_(classes), w_(dim * static_cast<std::size_t>(classes), 0.0),
          b_(static_cast<std::size_t>(classes), 0.0) {}

    std::size_t dim() const { return dim_; }
    int classes() const { return classes_; }

    void logits(const double* x, double* out) const {
        for (int c = 0; c < classes_; ++c) {
            double acc = b_[static_cast<std::size_t>(c)];
            const double* wc = w_.data() + static_cast<std::size_t>(c) * dim_;
            for (std::size_t j = 0; j < dim_; ++j) acc += wc[j] * x[j];
            out[static_cast<std::size_t>(c)] = acc;
        }
    }

    int predict(const double* x) const {
        std::vector<double> z(static_cast<std::size_t>(classes_));
        logits(x, z.data());
        int best = 0;
        for (int c = 1; c < classes_; ++c)
            if (z[static_cast<std::size_t>(c)] > z[static_cast<std::size_t>(best)]) best = c;
        return best;
    }

    // features: row-major (count x dim); labels in [0, classes).
    void fit(const std::vector<double>& features, const std::vector<int>& labels,
             const LogisticConfig& cfg) {
        const std::size_t count = labels.size();
        if (count == 0) throw ValidationError("logistic: empty training set");
        if (features.size() != count * dim_)
            throw ShapeError("logistic: feature matrix size mismatch");
        const std::size_t C = static_cast<std::size_t>(classes_);
        std::vector<double> probs(C);
        std::vector<double> gw(w_.size()), gb(b_.size());
        for (int step = 0; step < cfg.steps; ++step) {
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t i = 0; i < count; ++i) {
                const double* x = features.data() + i * dim_;
                logits(x, probs.data());
                double mx = probs[0];
                for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, probs[c]);
                double denom = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    probs[c] = std::exp(probs[c] - mx);
                    denom += probs[c];
                }
                for (std::size_t c = 0; c < C; ++c) {
                    double d = probs[c] / denom;
                    if (static_cast<int>(c) == labels[i]) d -= 1.0;
                    gb[c] += d;
                    double* gwc = gw.data() + c * dim_;
                    for (std::size_t j = 0; j < dim_; ++j) gwc[j] += d * x[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (std::size_t idx = 0; idx < w_.size(); ++idx)
                w_[idx] -= cfg.lr * (gw[idx] * inv + 2.0 * cfg.l2 * w_[idx]);
            for (std::size_t c = 0; c < C; ++c) b_[c] -= cfg.lr * gb[c] * inv;
        }
    }

private:
    std::size_t dim_ = 0;
    int classes_ = 0;
    std::vector<double> w_; // (classes x dim)
    std::vector<double> b_;
};

} // namespace c2fs
