#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace edulm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_to_string(const Shape &shape);

/// Graph node behind a Tensor handle. Holds values, the lazily allocated
/// gradient buffer and, for recorded ops, the closure that pushes this
/// node's gradient into its inputs.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    const char *op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode &)> backward_fn;

    /// Returns the gradient buffer, allocating zeros on first use.
    std::vector<T> &grad_buffer();
};

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copies of a Tensor share the same node; use clone() for a deep copy.
/// T is float for training and inference, double for gradient checking.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);
    /// Builds the result of a recorded op. Records the backward closure only
    /// when grad mode is on and some input requires a gradient.
    static Tensor from_op(const char *op, Shape shape, std::vector<T> data,
                          std::vector<std::shared_ptr<TensorNode<T>>> inputs,
                          std::function<void(TensorNode<T> &)> backward_fn);

    explicit operator bool() const noexcept { return node_ != nullptr; }

    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const T> data() const;
    /// Direct write access; used by initializers and the optimizer. Not
    /// recorded on the tape.
    std::span<T> mutable_data();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Reverse sweep from this scalar; accumulates into every reachable
    /// tensor that requires a gradient.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;
    bool shares_storage_with(const Tensor &other) const noexcept { return node_ == other.node_; }

    const std::shared_ptr<TensorNode<T>> &node() const noexcept { return node_; }

   private:
    explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<TensorNode<T>> node_;
};

/// Whether ops currently record backward closures (thread-local).
bool grad_enabled() noexcept;

/// Disables tape recording for its lifetime (inference, teacher forward).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From> &t, bool requires_grad = false) {
    std::vector<To> out(t.data().begin(), t.data().end());
    return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

extern template struct TensorNode<float>;
extern template struct TensorNode<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace edulm
