#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/error.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

struct LrScheduleEntry {
    int epoch = 0;
    double multiplier = 1.0;
};

// Plain SGD with momentum: v <- momentum*v + grad, p <- p - lr*v.
// Gradients are zeroed after each step.
template <typename S>
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Var<S>> params, double learning_rate, double momentum,
                 std::vector<LrScheduleEntry> schedule = {})
        : params_(std::move(params)),
          lr_(learning_rate),
          momentum_(momentum),
          schedule_(std::move(schedule)) {
        if (!(lr_ > 0)) throw ConfigError("sgd: learning rate must be positive");
        if (momentum_ < 0 || momentum_ >= 1) throw ConfigError("sgd: momentum must be in [0,1)");
        for (const auto& p : params_) velocity_.push_back(Tensor<S>::zeros(p.value().shape));
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& node = *params_[i].node();
            node.ensure_grad();
            if (!node.grad.all_finite())
                throw NumericError("sgd: non-finite gradient for parameter " + node.name);
            Tensor<S>& v = velocity_[i];
            const S lr = static_cast<S>(lr_);
            const S mu = static_cast<S>(momentum_);
            for (std::size_t j = 0; j < v.numel(); ++j) {
                v.data[j] = mu * v.data[j] + node.grad.data[j];
                node.value.data[j] -= lr * v.data[j];
            }
            node.zero_grad();
        }
    }

    // Applies any schedule multiplier registered for this epoch index.
    void apply_schedule(int epoch) {
        for (const auto& e : schedule_)
            if (e.epoch == epoch) lr_ *= e.multiplier;
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    const std::vector<Var<S>>& params() const { return params_; }
    std::vector<Tensor<S>>& velocities() { return velocity_; }
    const std::vector<Tensor<S>>& velocities() const { return velocity_; }

private:
    std::vector<Var<S>> params_;
    double lr_;
    double momentum_;
    std::vector<LrScheduleEntry> schedule_;
    std::vector<Tensor<S>> velocity_;
};

// target <- coeff*target + (1-coeff)*source, elementwise over matched
// parameter lists. The momentum twin is updated only through this.
template <typename S>
inline void ema_update(std::vector<Var<S>>& target, const std::vector<Var<S>>& source,
                       double coeff) {
    if (coeff < 0 || coeff > 1) throw ConfigError("ema_update: coeff must be in [0,1]");
    if (target.size() != source.size())
        throw ShapeError("ema_update: parameter count mismatch " + std::to_string(target.size()) +
                         " vs " + std::to_string(source.size()));
    for (std::size_t i = 0; i < target.size(); ++i) {
        Tensor<S>& t = target[i].value();
        const Tensor<S>& s = source[i].value();
        if (!t.same_shape(s))
            throw ShapeError("ema_update: shape mismatch for " + target[i].name() + ": " +
                             shape_str(t.shape) + " vs " + shape_str(s.shape));
        const S c = static_cast<S>(coeff);
        for (std::size_t j = 0; j < t.numel(); ++j)
            t.data[j] = c * t.data[j] + (S(1) - c) * s.data[j];
    }
}

template <typename S>
inline void zero_grads(std::vector<Var<S>>& params) {
    for (auto& p : params) p.node()->zero_grad();
}

} // namespace c2fs
