#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Leaves are created by the
// factory functions; every op in ops.hpp produces a new node that remembers
// its inputs and a backward rule when any input requires a gradient.
// Gradients accumulate additively into leaf grad buffers; callers zero them
// between optimisation steps.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdsep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into inputs that require grad.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return inputs.empty(); }
    // Grad buffer, zero-initialised on first use.
    T* grad_buffer();
};

template <typename T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    // Mutable access is only legal on leaves (parameters, optimiser targets).
    std::span<T> mutable_data();

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return !node_->grad.empty(); }
    // Empty span when no gradient has been accumulated yet.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return {node_->grad_buffer(), numel()}; }
    void zero_grad();

    T item() const;
    // Seeds d(this)/d(this) = 1 and propagates to every reachable leaf.
    void backward() const;
    // Value copy with no graph history.
    Tensor detach() const;

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

// Topologically ordered record of the differentiable ops reachable from a
// root: every node appears after all of its producers.
template <typename T>
class Tape {
  public:
    explicit Tape(const Tensor<T>& root);

    std::span<Node<T>* const> order() const { return order_; }
    // Root must be a single-element tensor.
    void backward();

  private:
    Tensor<T> root_;
    std::vector<Node<T>*> order_;
};

}  // namespace sdsep
