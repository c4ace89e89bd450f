#ifndef RGBD_AUTOGRAD_HPP
#define RGBD_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "rgbd/tensor.hpp"

namespace rgbd {
namespace nn {

// Dynamic reverse-mode graph. Every op allocates a node holding the forward
// value and a closure that scatters the node's gradient into its parents.
template <typename T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    std::function<void(NodeT<T>&)> backprop;
    const char* op = "leaf";

    void ensure_grad() {
        if (!has_grad) {
            grad = TensorT<T>(value.shape);
            has_grad = true;
        }
    }
    void zero_grad() {
        if (has_grad)
            for (auto& g : grad.data) g = T(0);
    }
};

template <typename T>
using VarT = std::shared_ptr<NodeT<T>>;

using Var = VarT<float>;
using VarD = VarT<double>;

// Grad mode: when off, ops skip closure/parent bookkeeping (pure inference).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev); }
};

// NaN/Inf screening of every op output; a hard error when tripped.
bool finite_checks_enabled();
void set_finite_checks(bool on);

template <typename T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled();
    return n;
}

template <typename T>
VarT<T> make_node(TensorT<T> value, const char* op, std::vector<VarT<T>> parents,
                  std::function<void(NodeT<T>&)> backprop) {
    if (finite_checks_enabled()) check_finite(value, op);
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->op = op;
    if (grad_enabled()) {
        bool need = false;
        for (auto& p : parents)
            if (p && p->requires_grad) need = true;
        if (need) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backprop = std::move(backprop);
        }
    }
    return n;
}

// Reverse pass from `root`. If seed is null the root must be scalar and is
// seeded with 1.
template <typename T>
void backward(const VarT<T>& root, const TensorT<T>* seed = nullptr) {
    require(root != nullptr, "backward on null var");
    if (!root->requires_grad) return;
    // iterative topological order (post-order DFS)
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen;
    std::vector<std::pair<NodeT<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<T>* p = node->parents[idx].get();
            idx++;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    if (seed) {
        require(seed->same_shape(root->value), "backward seed shape mismatch");
        for (int64_t i = 0; i < seed->numel(); i++) root->grad[i] += (*seed)[i];
    } else {
        require(root->value.numel() == 1, "backward without seed requires scalar root");
        root->grad[0] += T(1);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->backprop) {
            n->backprop(*n);
            if (finite_checks_enabled()) check_finite(n->grad, "grad");
        }
    }
}

// Named trainable parameters of one model, in registration order. The order
// is the checkpoint order.
struct ParamStore {
    std::vector<Var> vars;
    std::vector<std::string> names;

    Var add(const std::string& name, Tensor init) {
        auto v = std::make_shared<NodeT<float>>();
        v->value = std::move(init);
        v->requires_grad = true;
        vars.push_back(v);
        names.push_back(name);
        return v;
    }
    void zero_grad() {
        for (auto& v : vars) v->zero_grad();
    }
    int64_t count() const {
        int64_t n = 0;
        for (auto& v : vars) n += v->value.numel();
        return n;
    }
    Var find(const std::string& name) const {
        for (size_t i = 0; i < names.size(); i++)
            if (names[i] == name) return vars[i];
        return nullptr;
    }
};

}  // namespace nn
}  // namespace rgbd

#endif
