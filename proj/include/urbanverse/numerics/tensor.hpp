#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "urbanverse/common.hpp"
#include "urbanverse/numerics/rng.hpp"

namespace uv::num {

// Thread-local switch recording whether ops build backward closures.
inline bool& gradMode() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII guard disabling tape recording (inference / value-only evaluation).
struct NoGrad {
    bool prev;
    NoGrad() : prev(gradMode()) { gradMode() = false; }
    ~NoGrad() { gradMode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <class R>
struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<R> value;
    std::vector<R> grad;  // allocated on demand, same length as value
    bool requiresGrad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;  // reads this->grad, accumulates into parents

    void ensureGrad() {
        if (grad.size() != value.size()) grad.assign(value.size(), R(0));
    }
};

// Dense row-major tensor handle over a tape node. Values are immutable after
// an op constructs them; gradients accumulate into requires-grad leaves when
// backward() runs over the recorded graph.
template <class R>
class TensorT {
public:
    using Node = TensorNode<R>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(std::vector<int64_t> shape) {
        return filled(std::move(shape), R(0));
    }

    static TensorT filled(std::vector<int64_t> shape, R v) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(numelOf(n->shape), v);
        return TensorT(std::move(n));
    }

    static TensorT fromVector(std::vector<int64_t> shape, std::vector<R> v) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        if (static_cast<int64_t>(v.size()) != numelOf(n->shape))
            throw ShapeError("tensor: " + std::to_string(v.size()) + " values for shape " + fmtShape(n->shape));
        n->value = std::move(v);
        return TensorT(std::move(n));
    }

    static TensorT scalar(R v) { return fromVector({1}, {v}); }

    // Leaf parameter initialized N(0, stddev^2).
    static TensorT paramNormal(std::vector<int64_t> shape, Rng& rng, double stddev) {
        auto t = zeros(std::move(shape));
        for (auto& x : t.node_->value) x = static_cast<R>(rng.normal() * stddev);
        t.node_->requiresGrad = true;
        return t;
    }

    static TensorT paramFilled(std::vector<int64_t> shape, R v) {
        auto t = filled(std::move(shape), v);
        t.node_->requiresGrad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int64_t rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
    int64_t cols() const { return node_->shape.back(); }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::vector<R>& value() { return node_->value; }
    const std::vector<R>& value() const { return node_->value; }
    std::vector<R>& grad() {
        node_->ensureGrad();
        return node_->grad;
    }

    R item() const {
        if (numel() != 1) throw ShapeError("item: tensor has shape " + fmtShape(node_->shape));
        return node_->value[0];
    }

    bool requiresGrad() const { return node_->requiresGrad; }
    TensorT& setRequiresGrad(bool b) {
        node_->requiresGrad = b;
        return *this;
    }

    void zeroGrad() {
        node_->grad.assign(node_->value.size(), R(0));
    }

    std::shared_ptr<Node> node() const { return node_; }

    static int64_t numelOf(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <class R>
std::shared_ptr<TensorNode<R>> makeOpNode(std::vector<int64_t> shape,
                                          std::vector<std::shared_ptr<TensorNode<R>>> inputs) {
    auto n = std::make_shared<TensorNode<R>>();
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(TensorT<R>::numelOf(n->shape)));
    bool track = false;
    if (gradMode()) {
        for (const auto& in : inputs)
            if (in->requiresGrad) track = true;
    }
    if (track) {
        n->requiresGrad = true;
        n->parents = std::move(inputs);
    }
    return n;
}

}  // namespace detail

// Reverse-mode pass from a scalar loss. Gradients accumulate into every
// requires-grad node reachable from `loss`; leaves keep theirs for the
// optimizer. Unless retainGraph, the visited subgraph is released.
template <class R>
void backward(const TensorT<R>& loss, bool retainGraph = false) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + fmtShape(loss.shape()));

    using NodeP = std::shared_ptr<TensorNode<R>>;
    std::vector<NodeP> order;
    std::unordered_set<TensorNode<R>*> seen;
    std::vector<std::pair<NodeP, size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            auto child = n->parents[idx++];
            if (child->requiresGrad && !seen.count(child.get())) {
                seen.insert(child.get());
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (auto& n : order) n->ensureGrad();
    loss.node()->grad[0] += R(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& n = *it;
        if (n->backward) n->backward(*n);
        if (!retainGraph && !n->parents.empty()) {
            n->backward = nullptr;
            n->parents.clear();
        }
    }
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Named learnable array; the unit every model registers for checkpoints
// and optimizer steps.
template <class R>
struct NamedParam {
    std::string name;
    TensorT<R> tensor;
};

template <class R>
using ParamList = std::vector<NamedParam<R>>;

template <class R>
void zeroGrads(ParamList<R>& params) {
    for (auto& p : params) p.tensor.zeroGrad();
}

template <class R>
int64_t paramCount(const ParamList<R>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

}  // namespace uv::num
