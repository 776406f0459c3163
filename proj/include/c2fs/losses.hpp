#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/error.hpp"
#include "c2fs/ops.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Composite weights: L = L_ce + L_cont + alpha*L_rec + beta*L_align.
struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    bool tie_alpha_beta = true;

    void validate() const {
        if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
        if (tie_alpha_beta && alpha != beta)
            throw ConfigError("tie_alpha_beta requires alpha == beta");
    }
};

struct LossReport {
    double l_ce = 0, l_cont = 0, l_rec = 0, l_align = 0, total = 0;
};

// Per-coarse-class FIFO queues of unit-norm momentum keys; the negative pool
// for the within-class InfoNCE loss.
template <typename S>
struct ContrastiveState {
    std::size_t queue_capacity = 4096;
    double temperature = 0.2;
    std::vector<std::deque<std::vector<S>>> queues;

    ContrastiveState() = default;
    ContrastiveState(int coarse_count, std::size_t capacity, double tau)
        : queue_capacity(capacity), temperature(tau), queues(static_cast<std::size_t>(coarse_count)) {
        if (capacity == 0) throw ConfigError("contrastive: queue capacity must be positive");
        if (!(tau > 0)) throw ConfigError("contrastive: temperature must be positive");
    }

    std::size_t size(int coarse) const { return queues[static_cast<std::size_t>(coarse)].size(); }

    // Keys go to their own class queue only; oldest entries are evicted.
    void enqueue(const Tensor<S>& keys, const std::vector<int>& labels) {
        if (keys.rank() != 2 || keys.shape[0] != labels.size())
            throw ShapeError("contrastive enqueue: keys " + shape_str(keys.shape) + " vs " +
                             std::to_string(labels.size()) + " labels");
        const std::size_t d = keys.shape[1];
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= queues.size())
                throw ValidationError("contrastive enqueue: coarse label " + std::to_string(y) +
                                      " out of range");
            double nrm = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double v = keys.at2(i, j);
                nrm += v * v;
            }
            if (std::abs(std::sqrt(nrm) - 1.0) > 1e-5)
                throw NumericError("contrastive enqueue: key " + std::to_string(i) +
                                   " is not unit norm");
            std::vector<S> k(d);
            for (std::size_t j = 0; j < d; ++j) k[j] = keys.at2(i, j);
            auto& q = queues[static_cast<std::size_t>(y)];
            q.push_back(std::move(k));
            while (q.size() > queue_capacity) q.pop_front();
        }
    }
};

// Coarse cross-entropy (Eq. 1 applied to classifier logits).
template <typename S>
Var<S> loss_ce(const Var<S>& logits, const std::vector<int>& coarse_labels) {
    return ops::softmax_cross_entropy(logits, coarse_labels);
}

// Within-coarse-class InfoNCE: each query's positive is its own momentum key,
// negatives are the current queue of its own coarse class. With an empty
// queue the sample contributes exactly 0 (log 1). Keys are plain tensors and
// never carry gradients. When enqueue_after is set, keys are pushed into
// their class queues after the loss is computed.
template <typename S>
Var<S> loss_cont(const Var<S>& queries, const Tensor<S>& keys, const std::vector<int>& coarse_labels,
                 ContrastiveState<S>& state, bool enqueue_after = true) {
    const auto& qv = queries.value();
    if (qv.rank() != 2 || !qv.same_shape(keys))
        throw ShapeError("loss_cont: queries " + shape_str(qv.shape) + " vs keys " +
                         shape_str(keys.shape));
    if (qv.shape[0] != coarse_labels.size())
        throw ShapeError("loss_cont: batch " + std::to_string(qv.shape[0]) + " vs " +
                         std::to_string(coarse_labels.size()) + " labels");
    const std::size_t n = qv.shape[0], d = qv.shape[1];
    const S tau = static_cast<S>(state.temperature);

    // Snapshot the negatives now; the queues may change after enqueue.
    struct Saved {
        Tensor<S> keys;
        std::vector<std::vector<S>> negs;  // flattened per sample
        std::vector<std::vector<S>> probs; // softmax over [pos, negs...]
        S tau;
    };
    auto saved = std::make_shared<Saved>();
    saved->keys = keys;
    saved->tau = tau;
    saved->negs.resize(n);
    saved->probs.resize(n);

    S total = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = coarse_labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= state.queues.size())
            throw ValidationError("loss_cont: coarse label " + std::to_string(y) +
                                  " out of range");
        const auto& queue = state.queues[static_cast<std::size_t>(y)];
        auto& negs = saved->negs[i];
        negs.reserve(queue.size() * d);
        for (const auto& k : queue) negs.insert(negs.end(), k.begin(), k.end());

        const std::size_t m = queue.size();
        std::vector<S> z(m + 1);
        S dotp = S(0);
        for (std::size_t j = 0; j < d; ++j) dotp += qv.at2(i, j) * keys.at2(i, j);
        z[0] = dotp / tau;
        for (std::size_t t = 0; t < m; ++t) {
            S dn = S(0);
            const S* neg = negs.data() + t * d;
            for (std::size_t j = 0; j < d; ++j) dn += qv.at2(i, j) * neg[j];
            z[t + 1] = dn / tau;
        }
        S mx = z[0];
        for (S v : z) mx = std::max(mx, v);
        S denom = S(0);
        auto& probs = saved->probs[i];
        probs.resize(m + 1);
        for (std::size_t t = 0; t <= m; ++t) {
            probs[t] = std::exp(z[t] - mx);
            denom += probs[t];
        }
        for (std::size_t t = 0; t <= m; ++t) probs[t] /= denom;
        total -= std::log(probs[0]);
    }

    Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(n));
    auto bw = [saved, n, d](Node<S>& self) {
        Node<S>& pq = *self.parents[0];
        if (!pq.requires_grad) return;
        pq.ensure_grad();
        const S g = self.grad.data[0] / (static_cast<S>(n) * saved->tau);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& probs = saved->probs[i];
            const auto& negs = saved->negs[i];
            // d/dq of (-z0 + logsumexp(z)) = (1/tau) * (sum_j p_j v_j - v_0)
            for (std::size_t j = 0; j < d; ++j) {
                S acc = (probs[0] - S(1)) * saved->keys.at2(i, j);
                for (std::size_t t = 1; t < probs.size(); ++t)
                    acc += probs[t] * negs[(t - 1) * d + j];
                pq.grad.at2(i, j) += g * acc;
            }
        }
    };
    Var<S> loss = make_op_node<S>(std::move(out), {queries}, bw, "loss_cont");
    if (enqueue_after) state.enqueue(keys, coarse_labels);
    return loss;
}

// MSE between the decoder output and the augmented input it reconstructs.
template <typename S>
Var<S> loss_rec(const Var<S>& reconstruction, const Var<S>& original) {
    return ops::mse(reconstruction, original);
}

// Eq. 4: sum over i in {2,3,4} of ||R_i(f^(i)) - R_q(f^q)||^2, averaged over
// the batch. Zero iff every rescaled pair coincides.
template <typename S>
Var<S> loss_align(const std::array<Var<S>, 4>& rescaled) {
    const auto& zq = rescaled[3];
    std::vector<Var<S>> terms;
    for (std::size_t i = 0; i < 3; ++i) {
        require_same_shape("loss_align", rescaled[i].value(), zq.value());
        terms.push_back(ops::squared_distance_batch_mean(rescaled[i], zq));
    }
    return ops::weighted_sum(terms, {S(1), S(1), S(1)});
}

// Eq. 5 composite; returns the graph node and a value report whose total is
// exactly ce + cont + alpha*rec + beta*align.
template <typename S>
std::pair<Var<S>, LossReport> loss_total(const Var<S>& ce, const Var<S>& cont, const Var<S>& rec,
                                         const Var<S>& align, const LossWeights& w) {
    w.validate();
    Var<S> total = ops::weighted_sum<S>({ce, cont, rec, align},
                                        {S(1), S(1), static_cast<S>(w.alpha),
                                         static_cast<S>(w.beta)});
    LossReport r;
    r.l_ce = static_cast<double>(ce.item());
    r.l_cont = static_cast<double>(cont.item());
    r.l_rec = static_cast<double>(rec.item());
    r.l_align = static_cast<double>(align.item());
    r.total = static_cast<double>(total.item());
    return {total, r};
}

} // namespace c2fs
