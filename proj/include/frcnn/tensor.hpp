#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "frcnn/common.hpp"

namespace frcnn {

class Tensor;
class GradStore;

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<Scalar> value;
    bool requires_grad = false;
    std::vector<Scalar> grad;  // leaf accumulator, filled by backward()
    std::string name;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Receives this node's upstream gradient, adds contributions into the
    // parents' buffers in `store`.
    std::function<void(const TensorNode&, const std::vector<Scalar>&, GradStore&)> backprop;

    std::size_t size() const { return value.size(); }
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

}  // namespace detail

// Per-backward gradient buffers, keyed by node. Keeping them out of the nodes
// lets several backward passes over graphs sharing the same leaf parameters
// run concurrently.
class GradStore {
public:
    std::vector<Scalar>& buffer(const detail::TensorNode* n) {
        auto& b = buf_[n];
        if (b.size() != n->size()) b.assign(n->size(), Scalar(0));
        return b;
    }

    const std::vector<Scalar>* find(const detail::TensorNode* n) const {
        auto it = buf_.find(n);
        return it == buf_.end() ? nullptr : &it->second;
    }

    void clear() { buf_.clear(); }

private:
    std::unordered_map<const detail::TensorNode*, std::vector<Scalar>> buf_;
};

// Dense row-major tensor, the carrier for images, feature maps, kernels and
// gradients. Value-semantic handle over a shared node; ops record their
// backward closure on the node they produce.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad);
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<Scalar> data,
                            bool requires_grad = false) {
        for (std::size_t e : shape) require(e > 0, "tensor extents must be positive");
        const std::size_t n = detail::shape_product(shape);
        if (data.empty()) data.assign(n, Scalar(0));
        require(data.size() == n, "tensor data length " + std::to_string(data.size()) +
                                      " does not match shape " + detail::shape_str(shape));
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    static Tensor scalar(Scalar v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t extent(std::size_t d) const { return node_->shape[d]; }

    const std::vector<Scalar>& data() const { return node_->value; }
    std::vector<Scalar>& mutable_data() { return node_->value; }
    Scalar item() const {
        require(size() == 1, "item() on non-scalar tensor " + detail::shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    const std::string& name() const { return node_->name; }
    Tensor& set_name(std::string n) {
        node_->name = std::move(n);
        return *this;
    }

    // Leaf gradient accumulator (empty until a backward pass reaches it).
    const std::vector<Scalar>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(size(), Scalar(0)); }
    void clear_grad() { node_->grad.clear(); }

    bool is_leaf() const { return node_->parents.empty(); }

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

    // Detached copy of the values (no graph, no grad).
    Tensor detach() const { return from_data(node_->shape, node_->value, false); }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

using BackFn = std::function<void(const detail::TensorNode&, const std::vector<Scalar>&, GradStore&)>;

// Op-node constructor used by every differentiable operation.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<Scalar> value,
                      std::vector<Tensor> parents, BackFn backprop, const char* what) {
    FRCNN_DEBUG_FINITE(value, what);
    Tensor t = Tensor::from_data(std::move(shape), std::move(value));
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    t.set_requires_grad(needs);
    auto* node = t.node();
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(p.node_ptr());
    if (needs) node->backprop = std::move(backprop);
    return t;
}

namespace detail {

inline void topo_order(TensorNode* root, std::vector<TensorNode*>& order) {
    // Iterative post-order over grad-requiring ancestors.
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients land in `store`; callers
// pick up leaf buffers from there.
inline void backward(const Tensor& loss, GradStore& store) {
    require(loss.size() == 1, "backward requires a scalar loss, got " + detail::shape_str(loss.shape()));
    require(loss.requires_grad(), "backward on a tensor with no grad-requiring ancestors");
    std::vector<detail::TensorNode*> order;
    detail::topo_order(loss.node(), order);
    store.buffer(loss.node())[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (n->backprop) n->backprop(*n, store.buffer(n), store);
    }
}

// Convenience form: runs the sweep and accumulates every reached node's
// gradient onto the node itself (so parameter leaves collect across calls).
inline void backward(const Tensor& loss) {
    GradStore store;
    backward(loss, store);
    std::vector<detail::TensorNode*> order;
    detail::topo_order(loss.node(), order);
    for (detail::TensorNode* n : order) {
        const std::vector<Scalar>* g = store.find(n);
        if (!g) continue;
        if (n->grad.size() != n->size()) n->grad.assign(n->size(), Scalar(0));
        for (std::size_t i = 0; i < g->size(); ++i) n->grad[i] += (*g)[i];
    }
}

}  // namespace frcnn
