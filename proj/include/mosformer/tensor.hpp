#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mosformer/common.hpp"

namespace mosf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same extent as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

inline thread_local int nograd_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::nograd_depth == 0; }

// Scoped switch that disables tape recording (eval-mode forwards).
struct NoGradGuard {
    NoGradGuard() { ++detail::nograd_depth; }
    ~NoGradGuard() { --detail::nograd_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor with reverse-mode autodiff. Copies share the
// underlying node (shallow handle semantics, like the usual tape designs).
template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return filled(std::move(shape), T(1)); }
    static Tensor filled(Shape shape, T value) {
        auto n = std::make_shared<detail::Node<T>>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }
    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size()) throw DimensionError("tensor data length does not match shape");
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return Tensor(std::move(n));
    }
    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.data()) v = static_cast<T>(rng.normal(static_cast<double>(mean), static_cast<double>(stddev)));
        return t;
    }
    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.data()) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t size() const { return n_->data.size(); }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }

    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (size() != 1) throw DimensionError("item() requires a scalar tensor");
        return n_->data[0];
    }

    // Value copy detached from the tape.
    Tensor detached() const {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = n_->shape;
        n->data = n_->data;
        return Tensor(std::move(n));
    }

    // Runs reverse-mode accumulation from this scalar. Consumes the tape:
    // interior closures are released as they fire.
    void backward();

    std::shared_ptr<detail::Node<T>> node() const { return n_; }
    explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node<T>> n_;
};

// Builds an op result node. `parents` that require grad keep the tape alive;
// `bw` receives the output node and must accumulate into parent grads.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents,
                  std::function<void(detail::Node<T>&)> bw) {
    if (shape_numel(shape) != values.size()) throw DimensionError("op output data length does not match shape");
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.defined() && p.requires_grad()) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents)
            if (p.defined()) n->parents.push_back(p.node());
        n->backward_fn = std::move(bw);
    }
    return Tensor<T>(std::move(n));
}

template <typename T>
void Tensor<T>::backward() {
    if (size() != 1) throw DimensionError("backward() requires a scalar loss");
    if (!n_->requires_grad) return;

    // Iterative post-order DFS for the topological order.
    std::vector<detail::Node<T>*> topo;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    std::vector<detail::Node<T>*> seen;
    enum : std::uint8_t { kOpen = 1, kDone = 2 };
    std::unordered_map<detail::Node<T>*, std::uint8_t> state;
    stack.push_back({n_.get(), 0});
    state[n_.get()] = kOpen;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && state[p] == 0) {
                state[p] = kOpen;
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            state[node] = kDone;
            stack.pop_back();
        }
    }

    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node<T>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
            node->backward_fn = nullptr;  // release saved activations eagerly
        }
    }
}

}  // namespace mosf
