#include "sdsep/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "sdsep/errors.hpp"

namespace sdsep {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
T* Node<T>::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
    return node_->value;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
    Tape<T>(*this).backward();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from(shape(), node_->value, false);
}

template <typename T>
Tape<T>::Tape(const Tensor<T>& root) : root_(root) {
    if (!root.defined()) throw ContractError("tape root is undefined");
    // Iterative post-order DFS over nodes that carry gradients.
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    if (root.requires_grad()) stack.emplace_back(&root.node(), 0);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next == 0 && !visited.insert(node).second) {
            stack.pop_back();
            continue;
        }
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.contains(child)) stack.emplace_back(child, 0);
            continue;
        }
        order_.push_back(node);
        stack.pop_back();
    }
}

template <typename T>
void Tape<T>::backward() {
    if (root_.numel() != 1) {
        throw ContractError("backward() needs a single-element result, got shape " +
                            shape_string(root_.shape()));
    }
    if (order_.empty()) throw ContractError("backward() on a result that does not require grad");
    root_.node().grad_buffer()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>& node = **it;
        if (node.backward && !node.grad.empty()) node.backward(node);
    }
}

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace sdsep
