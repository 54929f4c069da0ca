#include "edulm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "edulm/error.hpp"

namespace edulm {

namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
void require_finite(const char *op, std::span<const T> values) {
    for (const T v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}
}  // namespace

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape &shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
std::vector<T> &TensorNode<T>::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), T(0));
    }
    return grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
    for (const std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("shape " + shape_to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " elements");
    }
    require_finite<T>("tensor construction", data);
    node_ = std::make_shared<TensorNode<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(const char *op, Shape shape, std::vector<T> data,
                             std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                             std::function<void(TensorNode<T> &)> backward_fn) {
    require_finite<T>(op, data);
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    const bool any_input_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const auto &in) { return in && in->requires_grad; });
    if (g_grad_enabled && any_input_grad) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

template <typename T>
const Shape &Tensor<T>::shape() const {
    if (!node_) {
        throw UsageError("access to an empty tensor handle");
    }
    return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const Shape &s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
    }
    return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
    return shape_numel(shape());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    shape();
    return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    shape();
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw UsageError("item() requires a single-element tensor, got " + shape_to_string(shape()));
    }
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    const Shape &s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("index rank does not match tensor rank");
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (const std::size_t i : index) {
        if (i >= s[axis]) {
            throw ShapeError("index out of range");
        }
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
    shape();
    node_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    shape();
    return node_->grad_buffer();
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    shape();
    return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw UsageError("backward() requires a scalar loss, got shape " + shape_to_string(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    // iterative post-order DFS gives a topological order of the recorded graph
    std::vector<TensorNode<T> *> order;
    std::unordered_set<TensorNode<T> *> visited;
    std::vector<std::pair<TensorNode<T> *, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode<T> *child = node->inputs[next].get();
            ++next;
            if (child != nullptr && child->requires_grad && child->backward_fn && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T> *node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(shape(), node_->data, node_->requires_grad);
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace edulm
