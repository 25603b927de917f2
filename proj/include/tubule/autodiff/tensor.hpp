#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tubule/errors.hpp"

namespace tubule::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

/// Handle to a node in the differentiation graph. Copies share the node.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    /// Gradient after backward(); zeros if nothing reached this tensor.
    std::vector<T> grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    // Handles have shared_ptr semantics: constness of the handle does not
    // protect the node.
    std::vector<T>& grad_buffer() const { return node_->grad_buffer(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    T item() const;

    /// Reverse-mode accumulation from this scalar into every requires_grad
    /// leaf. A second call on the same graph without reset_backward() throws.
    void backward();
    /// Clears the backward marker and all non-leaf gradients of this graph.
    void reset_backward();
    void zero_grad() { node_->grad.clear(); }

    /// Same values, no graph edge back to this tensor.
    Tensor detach() const;

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds a result node. requires_grad is inherited from the parents; when
/// none requires grad the backward function and edges are dropped.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tubule::ad
