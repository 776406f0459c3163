#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "c2fs/error.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Reverse-mode autodiff over a define-by-run graph. Each forward op returns a
// Var owning its output tensor, links to its parents and a closure that
// scatters the output gradient back into the parents.

namespace detail {
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}
} // namespace detail

inline void set_finite_checks(bool on) { detail::finite_checks() = on; }

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor<S>::zeros(value.shape);
    }

    void zero_grad() {
        grad = Tensor<S>::zeros(value.shape);
    }
};

template <typename S>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    bool valid() const { return node_ != nullptr; }

    Tensor<S>& value() { return node_->value; }
    const Tensor<S>& value() const { return node_->value; }

    Tensor<S>& grad() { return node_->grad; }
    const Tensor<S>& grad() const { return node_->grad; }

    const Shape& shape() const { return node_->value.shape; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }

    std::shared_ptr<Node<S>> node() const { return node_; }

    // Scalar convenience for loss values.
    S item() const {
        if (node_->value.numel() != 1)
            throw ShapeError("item: tensor " + shape_str(node_->value.shape) + " is not scalar");
        return node_->value.data[0];
    }

private:
    std::shared_ptr<Node<S>> node_;
};

// Leaf holding data that never receives gradients.
template <typename S>
inline Var<S> make_constant(Tensor<S> value, std::string name = "const") {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->name = std::move(name);
    return Var<S>(n);
}

// Trainable leaf; persists across steps, gradients accumulate until zeroed.
template <typename S>
inline Var<S> make_parameter(Tensor<S> value, std::string name) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->grad = Tensor<S>::zeros(n->value.shape);
    n->requires_grad = true;
    n->name = std::move(name);
    return Var<S>(n);
}

template <typename S>
inline Var<S> make_op_node(Tensor<S> value, std::vector<Var<S>> parents,
                           std::function<void(Node<S>&)> backward, std::string name) {
    if (detail::finite_checks() && !value.all_finite())
        throw NumericError(name + ": non-finite value in forward output");
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->name = std::move(name);
    for (auto& p : parents) {
        n->parents.push_back(p.node());
        if (p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) n->backward_fn = std::move(backward);
    return Var<S>(n);
}

// Runs reverse-mode accumulation from a scalar loss. Seeds d(loss)/d(loss)=1
// and visits nodes in reverse topological order.
template <typename S>
inline void backward(const Var<S>& loss) {
    if (loss.value().numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS over the grad-requiring subgraph.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node<S>* node = stack.back().first;
        std::size_t& idx = stack.back().second;
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<S>* n : order) n->ensure_grad();
    loss.node()->grad.data[0] += S(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward_fn) {
            n->backward_fn(*n);
            if (detail::finite_checks()) {
                for (auto& p : n->parents) {
                    if (p->requires_grad && p->grad.numel() && !p->grad.all_finite())
                        throw NumericError(n->name + ": non-finite gradient for " + p->name);
                }
            }
        }
    }
}

// Accumulate g into parent's grad if it participates in the backward pass.
template <typename S>
inline void accumulate_grad(Node<S>& parent, const Tensor<S>& g) {
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    for (std::size_t i = 0; i < g.numel(); ++i) parent.grad.data[i] += g.data[i];
}

} // namespace c2fs
