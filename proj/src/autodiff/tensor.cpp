#include "tubule/autodiff/tensor.hpp"

#include <cmath>
#include <unordered_map>

namespace tubule::ad {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (values.size() != shape_numel(shape)) {
        throw DataError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

template <class T>
std::vector<T> Tensor<T>::grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
    return node_->grad;
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DataError("item(): tensor has shape " + shape_str(shape()));
    return node_->value[0];
}

namespace {

// Post-order over nodes that require grad; throws on a cycle.
template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_map<Node<T>*, int> state;  // 1 = on stack, 2 = done
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (!p->requires_grad) continue;
            const int s = state[p];
            if (s == 1) throw NumericError("backward: computation graph has a cycle");
            if (s == 0) {
                state[p] = 1;
                stack.push_back({p, 0});
            }
            continue;
        }
        state[n] = 2;
        order.push_back(n);
        stack.pop_back();
    }
    return order;
}

}  // namespace

template <class T>
void Tensor<T>::backward() {
    if (numel() != 1) throw DataError("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (node_->backward_done) throw NumericError("backward: already called on this graph; call reset_backward() first");
    if (!std::isfinite(static_cast<double>(node_->value[0]))) throw NumericError("backward: loss is not finite");
    node_->backward_done = true;
    if (!node_->requires_grad) return;
    const auto order = topo_order(node_.get());
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

template <class T>
void Tensor<T>::reset_backward() {
    node_->backward_done = false;
    if (!node_->requires_grad) return;
    for (Node<T>* n : topo_order(node_.get())) {
        if (n->backward_fn) n->grad.clear();
    }
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
    return from(shape(), values(), false);
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& p : parents) {
        if (p.defined() && p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
        for (auto& p : parents) {
            if (p.defined()) n->parents.push_back(p.node_ptr());
        }
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(n);
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace tubule::ad
